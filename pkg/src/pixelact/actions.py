"""Factored keyboard/mouse action records and quantile mouse discretization.

An action occupies exactly 8 slots: 4 key slots, 2 mouse-bin slots
(x and y movement), and 2 mouse-button slots. Continuous mouse deltas are
discretized with per-axis quantile bins around a dedicated exact-zero bin,
and re-continualized at inference time by sampling a truncated normal
restricted to the decoded bin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .keys import KEY_VOCAB_SIZE, NONE

N_KEY_SLOTS = 4
N_ACTION_SLOTS = 8


@dataclass(frozen=True)
class RawAction:
    """Undiscretized per-frame input state.

    ``keys`` may hold any number of codes as recorded; trajectories with
    more than 4 simultaneous keys are rejected by ``discretize`` and flagged
    by the quality filter, not at construction time.
    """

    keys: frozenset = frozenset()
    mouse_dx: float = 0.0
    mouse_dy: float = 0.0
    left_btn: bool = False
    right_btn: bool = False

    def __post_init__(self):
        for k in self.keys:
            if not 1 <= k < KEY_VOCAB_SIZE:
                raise ValueError(f"key code {k} outside vocabulary")


def canonical_key_slots(keys) -> tuple:
    """Sort key codes ascending and pad with NONE to 4 slots."""
    codes = sorted(set(keys))
    if len(codes) > N_KEY_SLOTS:
        raise ValueError(f"more than {N_KEY_SLOTS} simultaneous keys: {codes}")
    return tuple(codes) + (NONE,) * (N_KEY_SLOTS - len(codes))


@dataclass(frozen=True)
class Action:
    """Discretized 8-slot action record."""

    key_slots: tuple
    dx_bin: int
    dy_bin: int
    btn_slots: tuple  # (left, right), each 0/1

    def __post_init__(self):
        if len(self.key_slots) != N_KEY_SLOTS or len(self.btn_slots) != 2:
            raise ValueError("action must have 4 key slots and 2 button slots")
        nonpad = [k for k in self.key_slots if k != NONE]
        if nonpad != sorted(set(nonpad)):
            raise ValueError("non-NONE keys must be strictly ascending")

    @property
    def slots(self) -> tuple:
        return self.key_slots + (self.dx_bin, self.dy_bin) + self.btn_slots

    @classmethod
    def from_slots(cls, slots) -> "Action":
        slots = tuple(int(s) for s in slots)
        return cls(
            key_slots=canonical_key_slots([s for s in slots[:4] if s != NONE]),
            dx_bin=slots[4],
            dy_bin=slots[5],
            btn_slots=slots[6:8],
        )


@dataclass(frozen=True)
class TruncatedNormalParams:
    """Zero-mean normal fit of the continuous mouse deltas, per axis."""

    mu_x: float = 0.0
    mu_y: float = 0.0
    sigma_x: float = 96.0
    sigma_y: float = 22.0

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("sigma must be positive")

    def axis(self, axis: str):
        if axis == "x":
            return self.mu_x, self.sigma_x
        if axis == "y":
            return self.mu_y, self.sigma_y
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


@dataclass(frozen=True)
class AxisBinning:
    """Quantile bins for one mouse axis.

    Bin order: negative bins ascending, the exact-zero bin, positive bins.
    Negative bins are half-open [lo, hi); positive bins are (lo, hi] so the
    topmost bin is right-inclusive. Outermost bins are truncated at the
    fitted data min/max.
    """

    # interior boundaries per side (strictly increasing, exclusive of 0)
    neg_bounds: tuple = ()  # [data_min, b1, ..., 0]; empty if no neg samples
    pos_bounds: tuple = ()  # [0, c1, ..., data_max]; empty if no pos samples
    neg_collapsed: bool = False
    pos_collapsed: bool = False

    @property
    def n_neg(self) -> int:
        return max(len(self.neg_bounds) - 1, 0)

    @property
    def n_pos(self) -> int:
        return max(len(self.pos_bounds) - 1, 0)

    @property
    def zero_bin_index(self) -> int:
        return self.n_neg

    @property
    def n_bins(self) -> int:
        return self.n_neg + 1 + self.n_pos

    def bin_bounds(self, index: int) -> tuple:
        """(lo, hi) of a bin; the zero bin is the degenerate (0, 0)."""
        if not 0 <= index < self.n_bins:
            raise IndexError(f"bin index {index} out of range")
        if index < self.n_neg:
            return self.neg_bounds[index], self.neg_bounds[index + 1]
        if index == self.zero_bin_index:
            return 0.0, 0.0
        j = index - self.n_neg - 1
        return self.pos_bounds[j], self.pos_bounds[j + 1]

    def discretize_value(self, v: float) -> int:
        if not math.isfinite(v):
            raise ValueError(f"non-finite mouse delta: {v}")
        if v == 0.0:
            return self.zero_bin_index
        if v < 0.0:
            if self.n_neg == 0:
                return self.zero_bin_index
            # bins [b_i, b_{i+1}); clamp below data_min into bin 0
            i = int(np.searchsorted(self.neg_bounds[1:-1], v, side="right"))
            return i
        if self.n_pos == 0:
            return self.zero_bin_index
        # bins (c_j, c_{j+1}]; clamp above data_max into the top bin
        j = int(np.searchsorted(self.pos_bounds[1:-1], v, side="left"))
        return self.zero_bin_index + 1 + min(j, self.n_pos - 1)


@dataclass(frozen=True)
class QuantileBinning:
    x: AxisBinning = field(default_factory=AxisBinning)
    y: AxisBinning = field(default_factory=AxisBinning)

    def axis(self, axis: str) -> AxisBinning:
        if axis == "x":
            return self.x
        if axis == "y":
            return self.y
        raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def _fit_axis(nonzero: np.ndarray, bins_per_side: int) -> AxisBinning:
    if bins_per_side < 1:
        raise ValueError("bins_per_side must be >= 1")
    nonzero = np.asarray(nonzero, dtype=float)
    if nonzero.size and not np.all(np.isfinite(nonzero)):
        raise ValueError("samples must be finite")
    neg = np.sort(nonzero[nonzero < 0])
    pos = np.sort(nonzero[nonzero > 0])

    def side_bounds(vals, lo, hi):
        if vals.size == 0:
            return (), True
        qs = np.quantile(vals, np.arange(1, bins_per_side) / bins_per_side)
        interior = sorted(set(float(q) for q in qs if lo < q < hi))
        return (lo, *interior, hi), False

    neg_bounds, neg_collapsed = side_bounds(neg, float(neg[0]) if neg.size else 0.0, 0.0)
    pos_bounds, pos_collapsed = side_bounds(pos, 0.0, float(pos[-1]) if pos.size else 0.0)
    return AxisBinning(
        neg_bounds=neg_bounds,
        pos_bounds=pos_bounds,
        neg_collapsed=neg_collapsed,
        pos_collapsed=pos_collapsed,
    )


def fit_quantile_bins(
    dx_samples, dy_samples, bins_per_side: int = 10
) -> QuantileBinning:
    """Fit per-axis quantile bins to nonzero mouse deltas.

    Exact zeros in the samples are ignored; they always map to the dedicated
    zero bin. A side with no samples collapses (no bins on that side) and is
    reported via the ``*_collapsed`` flags.
    """
    return QuantileBinning(
        x=_fit_axis(np.asarray(dx_samples, dtype=float), bins_per_side),
        y=_fit_axis(np.asarray(dy_samples, dtype=float), bins_per_side),
    )


def save_binning(binning: QuantileBinning, path) -> None:
    import json
    from pathlib import Path

    def axis(ax: AxisBinning):
        return {
            "neg_bounds": [repr(v) for v in ax.neg_bounds],
            "pos_bounds": [repr(v) for v in ax.pos_bounds],
            "neg_collapsed": ax.neg_collapsed,
            "pos_collapsed": ax.pos_collapsed,
        }

    Path(path).write_text(json.dumps({"x": axis(binning.x), "y": axis(binning.y)}, indent=1))


def load_binning(path) -> QuantileBinning:
    import json
    from pathlib import Path

    raw = json.loads(Path(path).read_text())

    def axis(d):
        return AxisBinning(
            neg_bounds=tuple(float(v) for v in d["neg_bounds"]),
            pos_bounds=tuple(float(v) for v in d["pos_bounds"]),
            neg_collapsed=d["neg_collapsed"],
            pos_collapsed=d["pos_collapsed"],
        )

    return QuantileBinning(x=axis(raw["x"]), y=axis(raw["y"]))


def discretize(raw: RawAction, binning: QuantileBinning) -> Action:
    """Map a raw action onto the 8-slot discrete action space."""
    return Action(
        key_slots=canonical_key_slots(raw.keys),
        dx_bin=binning.x.discretize_value(raw.mouse_dx),
        dy_bin=binning.y.discretize_value(raw.mouse_dy),
        btn_slots=(int(raw.left_btn), int(raw.right_btn)),
    )


def truncated_normal_mean(lo: float, hi: float, sigma: float) -> float:
    """Analytic mean of N(0, sigma) restricted to [lo, hi]."""
    a, b = lo / sigma, hi / sigma
    z = ndtr(b) - ndtr(a)
    if z <= 0:
        return 0.5 * (float(lo) + float(hi))
    phi = lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)
    return float(sigma * (phi(a) - phi(b)) / z)


def sample_mouse(
    bin_index: int,
    axis: str,
    binning: QuantileBinning,
    tn: TruncatedNormalParams,
    rng: np.random.Generator,
) -> float:
    """Draw a continuous delta inside the bin from the fitted truncated normal.

    Inverse-CDF sampling on the normal restricted to the bin interval. The
    zero bin returns exactly 0. The result is nudged inside the half-open
    interval so that discretize(sample(b)) == b for every bin.
    """
    ax = binning.axis(axis)
    if bin_index == ax.zero_bin_index:
        return 0.0
    lo, hi = ax.bin_bounds(bin_index)
    mu, sigma = tn.axis(axis)
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    ca, cb = ndtr(a), ndtr(b)
    u = rng.uniform()
    if cb - ca <= 1e-300:
        v = 0.5 * (lo + hi)
    else:
        v = mu + sigma * float(ndtri(ca + u * (cb - ca)))
    if bin_index < ax.zero_bin_index:
        # negative bins are [lo, hi): keep strictly below hi
        v = min(max(v, lo), np.nextafter(hi, -np.inf))
    else:
        # positive bins are (lo, hi]: keep strictly above lo
        v = min(max(v, np.nextafter(lo, np.inf)), hi)
    return float(v)
