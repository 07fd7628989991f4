import numpy as np
import pytest

from conftest import curves
from multidefault.contagion import (
    Coefficient,
    ContagionAssetSpec,
    StrategyFamily,
    apply_jump,
    check_admissible,
    require_admissible,
    simulate_assets,
    simulate_wealth,
    terminal_wealth,
)
from multidefault.errors import AdmissibilityError, StructuralError
from multidefault.law import DefaultLawModel
from multidefault.optimizer import random_constant_family

LAW = DefaultLawModel.independent(curves(0.3, 0.2))
SPEC = ContagionAssetSpec.uniform(2, [0.08, 0.05], [[0.2, 0.0], [0.05, 0.25]], [[0.3, 0.1], [0.1, 0.4]])


def test_apply_jump_examples():
    assert apply_jump([100.0, 50.0], [0.5, 0.0]).tolist() == [50.0, 50.0]
    assert apply_jump([1.0], [0.25]).tolist() == [0.75]
    with pytest.raises(AdmissibilityError):
        apply_jump([1.0], [1.0])


def test_gamma_of_one_is_rejected_by_spec():
    with pytest.raises(AdmissibilityError):
        ContagionAssetSpec.uniform(1, [0.05], [[0.2]], [1.0])


def test_missing_jump_entry_is_structural():
    with pytest.raises(StructuralError):
        ContagionAssetSpec(1, 1, {0: Coefficient([0.05]), 1: Coefficient([0.05])}, {0: Coefficient([[0.2]]), 1: Coefficient([[0.2]])}, {})
    with pytest.raises(StructuralError):
        ContagionAssetSpec(1, 1, {0: Coefficient([0.05])}, {0: Coefficient([[0.2]]), 1: Coefficient([[0.2]])}, {(0, 0): [0.1]})


def test_exposure_of_one_is_inadmissible():
    spec = ContagionAssetSpec.uniform(1, [0.05], [[0.2]], [0.5])
    f = StrategyFamily.constant(1, 1.0, {0: [2.0], 1: [2.0]})
    rep = check_admissible(f, spec, 1.0)
    assert not rep.ok and rep.value == pytest.approx(1.0)
    with pytest.raises(AdmissibilityError, match="pi . gamma"):
        require_admissible(f, spec, 1.0)


def test_zero_strategy_keeps_initial_wealth():
    z = StrategyFamily.zero(2, 2, 3.0)
    paths = simulate_wealth(SPEC, z, 1.7, LAW, 4, 0.1, 3.0, count=5)
    for p in paths:
        assert np.all(p.wealth == 1.7)
    tw = terminal_wealth(SPEC, LAW, z, 1.7, 3.0, 2000, 4)
    assert np.all(tw.log_wealth == np.log(1.7))


def test_half_exposure_halves_wealth_at_default():
    spec = ContagionAssetSpec.uniform(1, [0.0], [[0.0]], [0.5])
    law = DefaultLawModel.independent(curves(1.0))
    f = StrategyFamily.constant(1, 5.0, {0: [1.0], 1: [1.0]})
    for p in simulate_wealth(spec, f, 1.0, law, 2, 0.5, 5.0, count=20):
        expected = 0.5 if np.isfinite(p.default_times[0]) and p.default_times[0] <= 5.0 else 1.0
        assert p.wealth[-1] == pytest.approx(expected, rel=1e-14)


def test_exogenous_defaults_leave_assets_unchanged():
    """With zero jumps and scenario-free coefficients the default law does not touch asset paths."""
    spec = ContagionAssetSpec.uniform(2, [0.08, 0.05], [[0.2, 0.0], [0.05, 0.25]])
    quiet = DefaultLawModel.independent(curves(1e-9, 1e-9))
    busy = DefaultLawModel.independent(curves(2.0, 3.0))
    a = simulate_assets(spec, quiet, 6, 0.25, 2.0, count=3)
    b = simulate_assets(spec, busy, 6, 0.25, 2.0, count=3)
    for pa, pb in zip(a, b):
        grid = np.intersect1d(pa.times, pb.times)
        ia, ib = np.searchsorted(pa.times, grid), np.searchsorted(pb.times, grid)
        assert np.allclose(pa.assets[ia], pb.assets[ib], rtol=1e-12)


def test_counterparty_jump_close_to_full_loss():
    g = 1 - 1e-12
    spec = ContagionAssetSpec.uniform(1, [0.0], [[0.0]], [g])
    law = DefaultLawModel.independent(curves(5.0))
    f = StrategyFamily.constant(1, 2.0, {0: [0.5], 1: [0.5]})
    tw = terminal_wealth(spec, law, f, 1.0, 2.0, 1000, 1)
    hit = tw.masks == 1
    assert hit.any()
    assert np.allclose(tw.log_wealth[hit], np.log1p(-0.5 * g), rtol=1e-14)


def test_positivity_fuzz():
    gen = np.random.default_rng(12)
    for _ in range(1000):
        f = random_constant_family(SPEC, 1.0, gen, margin=0.1, scale=5.0)
        assert check_admissible(f, SPEC, 1.0).ok
    tw = terminal_wealth(SPEC, LAW, f, 1.0, 1.0, 1000, 3)
    assert np.isfinite(tw.log_wealth).all()


def test_lognormal_terminal_moments_without_defaults():
    spec = ContagionAssetSpec.uniform(2, [0.08, 0.05], [[0.2, 0.0], [0.05, 0.25]])
    law = DefaultLawModel.independent(curves(1e-12, 1e-12))
    pi = np.array([0.6, 0.3])
    f = StrategyFamily.constant(2, 2.0, {b: pi for b in range(4)})
    lx = terminal_wealth(spec, law, f, 1.0, 2.0, 400_000, 7).log_wealth
    sig = pi @ np.array([[0.2, 0.0], [0.05, 0.25]])
    mean = (pi @ [0.08, 0.05] - 0.5 * sig @ sig) * 2.0
    var = sig @ sig * 2.0
    assert abs(lx.mean() - mean) < 3 * np.sqrt(var / lx.size)
    assert abs(lx.var() - var) < 3 * var * np.sqrt(2 / lx.size)


def test_terminal_wealth_thread_invariance():
    f = StrategyFamily.constant(2, 1.0, {b: [0.5, 0.2] for b in range(4)})
    a = terminal_wealth(SPEC, LAW, f, 1.0, 1.0, 150_000, 3, threads=1)
    b = terminal_wealth(SPEC, LAW, f, 1.0, 1.0, 150_000, 3, threads=2)
    assert np.array_equal(a.log_wealth, b.log_wealth)
