import numpy as np
import pytest

from conftest import curves
from multidefault.law import DefaultLawModel
from multidefault.oracle import Moments, estimate_price, estimate_prices, scenario_frequencies
from multidefault.pricing import DecomposedPayoff, kth_survival_payoff

MODEL = DefaultLawModel.clayton(curves(0.15, 0.2), 1.0)


def test_results_identical_across_threads():
    p = kth_survival_payoff(2, 1, 5.0)
    a = estimate_price(MODEL, p, 1.0, 200_000, 9, bins=4, threads=1)
    b = estimate_price(MODEL, p, 1.0, 200_000, 9, bins=4, threads=3)
    assert a == b


def test_constant_payoff_has_zero_stderr():
    bins = estimate_price(MODEL, DecomposedPayoff.constant(2, 5.0, 1.0), 0.0, 10_000, 1)
    (b,) = bins
    assert b.estimate.mean == 1.0 and b.estimate.stderr == 0.0


def test_stderr_scales_as_root_n():
    p = kth_survival_payoff(2, 2, 5.0)
    small = estimate_price(MODEL, p, 0.0, 100_000, 4)[0].estimate.stderr
    large = estimate_price(MODEL, p, 0.0, 400_000, 4)[0].estimate.stderr
    assert small / large == pytest.approx(2.0, rel=0.2)


def test_bins_partition_paths():
    bins = estimate_prices(MODEL, [kth_survival_payoff(2, 1, 5.0), kth_survival_payoff(2, 2, 5.0)], 2.0, 50_000, 3, bins=3)
    assert sum(b.count for b in bins) == 50_000
    for b in bins:
        assert len(b.lo) == len(b.J) and all(lo < hi for lo, hi in zip(b.lo, b.hi))


def test_scenario_frequencies_match_independent_probabilities():
    m = DefaultLawModel.independent(curves(0.3, 0.1))
    t = 2.0
    q = 1 - np.exp(-np.array([0.3, 0.1]) * t)
    ref = {0: (1 - q[0]) * (1 - q[1]), 1: q[0] * (1 - q[1]), 2: (1 - q[0]) * q[1], 3: q[0] * q[1]}
    freq = scenario_frequencies(m, t, 200_000, 8)
    assert sum(e.mean for e in freq.values()) == pytest.approx(1.0, abs=1e-15)
    for b, p in ref.items():
        assert freq[b].agrees(p, 4.0)


def test_moment_merge_matches_batch():
    x = np.random.default_rng(0).normal(size=(1000, 2))
    merged = Moments.of(x[:300]).merge(Moments.of(x[300:]))
    whole = Moments.of(x)
    assert merged.count == 1000
    assert np.allclose(merged.mean, whole.mean, rtol=1e-14) and np.allclose(merged.m2, whole.m2, rtol=1e-12)
