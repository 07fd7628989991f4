import numpy as np
import pytest
from scipy import integrate

from conftest import curves, gaussian_corr
from multidefault.errors import ConditioningError, ConfigurationError, DomainError
from multidefault.hazards import HazardCurve
from multidefault.law import (
    DefaultLawModel,
    FactorChain,
    FiltrationState,
    box_integral,
    conditional_density_given,
    density_at,
    prior_box_integral,
    sample_defaults,
)
from multidefault.scenarios import NameSet

MODELS = {
    "independent": DefaultLawModel.independent(curves(0.15, 0.2)),
    "clayton": DefaultLawModel.clayton(curves(0.15, 0.2), 2.0),
    "gaussian": DefaultLawModel.gaussian(curves(0.15, 0.2), gaussian_corr(2, 0.3)),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_box_mass_of_whole_space_is_one(name):
    m = MODELS[name]
    assert box_integral(m, FiltrationState(0.0), [0, 0], [np.inf, np.inf]) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_density_integrates_to_box_mass(name):
    m = MODELS[name]
    fs = FiltrationState(0.0)
    f = lambda y, x: float(density_at(m, fs, np.array([[x, y]]))[0])
    val, _ = integrate.dblquad(f, 0.5, 3.0, 1.0, 4.0, epsabs=1e-12, epsrel=1e-10)
    assert val == pytest.approx(box_integral(m, fs, [0.5, 1.0], [3.0, 4.0]), rel=1e-7)


def test_independent_density_is_product():
    m = MODELS["independent"]
    s = np.array([[1.3, 2.7]])
    ref = 0.15 * np.exp(-0.15 * 1.3) * 0.2 * np.exp(-0.2 * 2.7)
    assert density_at(m, FiltrationState(0.0), s)[0] == pytest.approx(ref, rel=1e-14)


def test_weak_dependence_approaches_independence():
    ind = MODELS["independent"]
    s = np.array([[0.4, 1.1], [2.0, 5.0], [7.0, 0.3]])
    for m in (DefaultLawModel.clayton(curves(0.15, 0.2), 1e-7), DefaultLawModel.gaussian(curves(0.15, 0.2), gaussian_corr(2, 1e-7))):
        d = density_at(m, FiltrationState(0.0), s)
        assert np.allclose(d, density_at(ind, FiltrationState(0.0), s), rtol=1e-4)


def test_conditional_kernel_normalizes():
    m = MODELS["clayton"]
    fs = FiltrationState(1.0)
    k = conditional_density_given(m, fs, NameSet.of(2, [0]), [0.6])
    val, _ = integrate.quad(lambda x: float(k(np.array([[x]]))[0]), 1.0, np.inf, epsabs=1e-13)
    assert val == pytest.approx(1.0, abs=1e-8)
    assert k.box([1.0], [np.inf]) == pytest.approx(1.0, abs=1e-12)


def test_conditioning_errors():
    m = MODELS["clayton"]
    with pytest.raises(DomainError):
        conditional_density_given(m, FiltrationState(1.0), NameSet.of(2, [0]), [1.5])
    # name 2 cannot default before t = 1
    capped = DefaultLawModel.independent([curves(0.1)[0], HazardCurve.from_segments([(1.0, 0.0), (None, 0.1)])])
    with pytest.raises(ConditioningError):
        conditional_density_given(capped, FiltrationState(2.0), NameSet.of(2, [1]), [0.5])


def test_factor_mixture_identity(factor_model):
    """Before the reveal the law is the probability-weighted mixture of the factor states."""
    fs0 = FiltrationState(0.0)
    lo, hi = [0.5, 0.0], [2.0, 3.0]
    mix = sum(
        p * box_integral(factor_model, FiltrationState(2.0, j), lo, hi) for j, p in enumerate(factor_model.factor.p)
    )
    assert box_integral(factor_model, fs0, lo, hi) == pytest.approx(mix, rel=1e-13)
    assert prior_box_integral(factor_model, lo, hi) == pytest.approx(mix, rel=1e-13)


def test_factor_state_rules(factor_model):
    with pytest.raises(DomainError):
        factor_model.weights(FiltrationState(2.0))
    with pytest.raises(DomainError):
        factor_model.weights(FiltrationState(0.5, 1))
    with pytest.raises(ConfigurationError):
        FactorChain((0.5, 2.0), (0.5, 0.5), 1.0)


def test_sampler_matches_box_mass():
    m = MODELS["clayton"]
    smp = sample_defaults(m, 11, 200_000)
    lo, hi = np.array([0.0, 5.0]), np.array([5.0, np.inf])
    inside = ((smp.times > lo) & (smp.times <= hi)).all(axis=1)
    p = box_integral(m, FiltrationState(0.0), lo, hi)
    se = np.sqrt(p * (1 - p) / len(smp))
    assert abs(inside.mean() - p) < 4 * se


def test_exponential_sampler_mean():
    m = DefaultLawModel.independent(curves(0.1))
    smp = sample_defaults(m, 5, 1_000_000)
    x = smp.times[:, 0]
    assert abs(x.mean() - 10.0) < 4 * x.std() / np.sqrt(x.size)


def test_sampler_thread_invariance(factor_model):
    a = sample_defaults(factor_model, 3, 150_000, threads=1)
    b = sample_defaults(factor_model, 3, 150_000, threads=3)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.factor, b.factor)
