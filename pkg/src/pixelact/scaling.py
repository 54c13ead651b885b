"""Data scaling-law fit L(D) = L_inf + (D_c / D) ** alpha.

Least squares in loss space. For a fixed alpha the model is linear in
(L_inf, c) with c = D_c ** alpha, so the fit multi-starts over an alpha
grid with a closed-form inner solve, then refines the best alpha by
bounded scalar minimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

ALPHA_GRID = np.linspace(0.01, 2.0, 64)


@dataclass(frozen=True)
class ScalingFitParams:
    l_inf: float
    d_c: float
    alpha: float
    residual: float  # sum of squared errors
    identifiable: bool = True

    def predict(self, d) -> np.ndarray:
        return self.l_inf + (self.d_c / np.asarray(d, dtype=float)) ** self.alpha


def _inner_solve(alpha: float, d: np.ndarray, l: np.ndarray):
    """Best (l_inf, c) for fixed alpha, constrained to c > 0, l_inf >= 0.
    Returns (sse, l_inf, c)."""
    x = d ** (-alpha)
    a = np.stack([np.ones_like(x), x], axis=1)
    (l_inf, c), *_ = np.linalg.lstsq(a, l, rcond=None)
    if c <= 0 or l_inf < 0:
        # project onto the boundary that still makes sense
        l_inf = max(float(l_inf), 0.0)
        c = max(float(c), 1e-300)
    sse = float(np.sum((l_inf + c * x - l) ** 2))
    return sse, float(l_inf), float(c)


def fit_power_law(points) -> ScalingFitParams:
    """points: iterable of (D, L) with at least 3 distinct D values."""
    pts = np.asarray(sorted(points), dtype=float)
    if len(pts) < 3 or len(np.unique(pts[:, 0])) < 3:
        raise ValueError("need at least 3 points with distinct D")
    d, l = pts[:, 0], pts[:, 1]
    if np.allclose(l, l[0]):
        return ScalingFitParams(
            l_inf=float(l[0]), d_c=1.0, alpha=float("nan"),
            residual=0.0, identifiable=False,
        )

    best = min((_inner_solve(a, d, l) + (a,) for a in ALPHA_GRID))
    _, _, _, alpha0 = best
    step = float(ALPHA_GRID[1] - ALPHA_GRID[0])
    lo = max(alpha0 - step, 1e-6)
    hi = alpha0 + step
    res = minimize_scalar(
        lambda a: _inner_solve(a, d, l)[0],
        bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-12},
    )
    alpha = float(res.x)
    sse, l_inf, c = _inner_solve(alpha, d, l)
    return ScalingFitParams(
        l_inf=l_inf,
        d_c=float(c ** (1.0 / alpha)),
        alpha=alpha,
        residual=sse,
    )
