import itertools

import numpy as np
import pytest

from pixelact.actions import (
    Action,
    RawAction,
    TruncatedNormalParams,
    canonical_key_slots,
    discretize,
    fit_quantile_bins,
    sample_mouse,
    truncated_normal_mean,
)
from pixelact.keys import key_code


def test_one_bin_per_side_forced():
    b = fit_quantile_bins([-10, -5, -1, 1, 5, 10], [-10, -5, -1, 1, 5, 10], bins_per_side=1)
    assert b.x.n_bins == 3
    assert b.x.zero_bin_index == 1
    assert b.x.discretize_value(-3.0) == 0
    assert b.x.discretize_value(0.0) == 1
    assert b.x.discretize_value(3.0) == 2


def test_all_zero_samples_degenerate():
    b = fit_quantile_bins([0.0, 0.0], [0.0], bins_per_side=10)
    assert b.x.n_bins == 1
    assert b.x.discretize_value(0.0) == b.x.zero_bin_index == 0
    assert b.x.neg_collapsed and b.x.pos_collapsed


def test_quantile_occupancy_against_sort_oracle():
    rng = np.random.default_rng(0)
    samples = rng.normal(0, 96, size=1000)
    samples = samples[samples != 0]
    b = fit_quantile_bins(samples, samples, bins_per_side=10)

    counts = np.zeros(b.x.n_bins)
    for v in samples:
        counts[b.x.discretize_value(float(v))] += 1
    occupancy = counts / len(samples)

    # oracle: full sort, count per quantile slice on each side
    neg = np.sort(samples[samples < 0])
    pos = np.sort(samples[samples > 0])
    uniform_neg = len(neg) / len(samples) / 10
    uniform_pos = len(pos) / len(samples) / 10
    for i in range(10):
        assert abs(occupancy[i] - uniform_neg) <= 0.02
        assert abs(occupancy[b.x.zero_bin_index + 1 + i] - uniform_pos) <= 0.02


def test_discretize_zero_and_key_sorting():
    b = fit_quantile_bins([-4, -2, 2, 4], [-4, -2, 2, 4], bins_per_side=2)
    raw = RawAction(keys=frozenset({key_code("d"), key_code("w")}), mouse_dx=0.0)
    a = discretize(raw, b)
    assert a.dx_bin == b.x.zero_bin_index
    assert a.key_slots == (key_code("d"), key_code("w"), 0, 0)


def test_discretize_clamps_below_lowest_edge():
    b = fit_quantile_bins([-4, -2, 2, 4], [-4, -2, 2, 4], bins_per_side=2)
    assert b.x.discretize_value(-100.0) == 0
    assert b.x.discretize_value(100.0) == b.x.n_bins - 1


def test_discretize_matches_linear_scan_oracle():
    rng = np.random.default_rng(1)
    samples = rng.normal(0, 50, 5000)
    b = fit_quantile_bins(samples, samples / 4, bins_per_side=10).x

    def scan_oracle(v):
        if v == 0.0:
            return b.zero_bin_index
        best = 0 if v < 0 else b.n_bins - 1
        for i in range(b.n_bins):
            if i == b.zero_bin_index:
                continue
            lo, hi = b.bin_bounds(i)
            if i < b.zero_bin_index and lo <= v < hi:
                return i
            if i > b.zero_bin_index and lo < v <= hi:
                return i
        return best

    for v in rng.normal(0, 60, 500):
        assert b.discretize_value(float(v)) == scan_oracle(float(v))


def test_discretize_rejects_too_many_keys():
    b = fit_quantile_bins([1.0, -1.0], [1.0, -1.0], 1)
    raw = RawAction(keys=frozenset(range(1, 6)))
    with pytest.raises(ValueError):
        discretize(raw, b)


def test_value_in_bin_interval_property():
    rng = np.random.default_rng(2)
    samples = rng.normal(0, 96, 4000)
    b = fit_quantile_bins(samples, samples, bins_per_side=10).x
    lo_all, hi_all = samples.min(), samples.max()
    for v in rng.uniform(lo_all, hi_all, 10_000):
        v = float(v)
        idx = b.discretize_value(v)
        if v == 0.0:
            assert idx == b.zero_bin_index
            continue
        assert idx != b.zero_bin_index
        lo, hi = b.bin_bounds(idx)
        if idx < b.zero_bin_index:
            assert lo <= v < hi
        else:
            assert lo < v <= hi


def test_zero_bin_samples_exactly_zero():
    b = fit_quantile_bins([-3, 3], [-3, 3], 1)
    tn = TruncatedNormalParams()
    rng = np.random.default_rng(3)
    assert sample_mouse(b.x.zero_bin_index, "x", b, tn, rng) == 0.0


def test_sample_within_bin_bounds():
    rng = np.random.default_rng(4)
    samples = rng.normal(0, 96, 2000)
    b = fit_quantile_bins(samples, samples / 4, bins_per_side=5)
    tn = TruncatedNormalParams()
    for axis in ("x", "y"):
        ax = b.axis(axis)
        for idx in range(ax.n_bins):
            if idx == ax.zero_bin_index:
                continue
            lo, hi = ax.bin_bounds(idx)
            for _ in range(20):
                v = sample_mouse(idx, axis, b, tn, rng)
                assert lo <= v <= hi


def _numeric_truncated_mean(lo, hi, sigma, n=200_001):
    # independent oracle: trapezoid integration of x*phi(x/sigma) over [lo, hi]
    xs = np.linspace(lo, hi, n)
    pdf = np.exp(-0.5 * (xs / sigma) ** 2)
    return np.trapezoid(xs * pdf, xs) / np.trapezoid(pdf, xs)


def test_truncated_normal_mean_matches_integration_oracle():
    # frozen from the oracle: mean of N(0, 96) restricted to [2, 10]
    oracle = _numeric_truncated_mean(2.0, 10.0, 96.0)
    assert abs(oracle - 5.9965286) < 5e-4
    assert abs(truncated_normal_mean(2.0, 10.0, 96.0) - oracle) < 1e-6


def test_sampler_empirical_mean_in_bin():
    samples = np.array([-10.0, -3.0, 2.0, 2.0, 10.0])
    b = fit_quantile_bins(samples, samples, bins_per_side=2)
    # positive quantile boundaries land at (0, 2, 10), giving a (2, 10] bin
    ax = b.x
    target = None
    for idx in range(ax.n_bins):
        if idx <= ax.zero_bin_index:
            continue
        if ax.bin_bounds(idx) == (2.0, 10.0):
            target = idx
    assert target is not None
    tn = TruncatedNormalParams()
    rng = np.random.default_rng(5)
    vals = [sample_mouse(target, "x", b, tn, rng) for _ in range(100_000)]
    assert abs(np.mean(vals) - _numeric_truncated_mean(2.0, 10.0, 96.0)) < 0.05


def test_roundtrip_discretize_sample_identity():
    rng = np.random.default_rng(6)
    samples = rng.normal(0, 96, 3000)
    b = fit_quantile_bins(samples, rng.normal(0, 22, 3000), bins_per_side=10)
    tn = TruncatedNormalParams()
    for axis in ("x", "y"):
        ax = b.axis(axis)
        for idx in range(ax.n_bins):
            for _ in range(1000 // ax.n_bins + 1):
                v = sample_mouse(idx, axis, b, tn, rng)
                assert ax.discretize_value(v) == idx


def test_canonical_key_ordering_permutation_invariant():
    keys = [key_code("w"), key_code("a"), key_code("space")]
    slots = {canonical_key_slots(p) for p in itertools.permutations(keys)}
    assert len(slots) == 1


def test_action_from_slots_roundtrip():
    a = Action.from_slots((5, 3, 0, 0, 2, 1, 1, 0))
    assert a.key_slots == (3, 5, 0, 0)
    assert a.slots[4:] == (2, 1, 1, 0)
