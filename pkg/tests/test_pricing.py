import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import curves, gaussian_corr
from multidefault.errors import ConfigurationError, DomainError
from multidefault.law import DefaultLawModel, FiltrationState
from multidefault.oracle import estimate_price
from multidefault.pricing import (
    DecomposedPayoff,
    first_to_default_survival,
    kth_survival_payoff,
    kth_to_default_survival,
    ladder_weights,
    loss_call,
    price_general,
    tranche_price,
)
from multidefault.scenarios import NameSet, ScenarioState

RATES = (0.15, 0.2, 0.25)
IND3 = DefaultLawModel.independent(curves(*RATES))
T0 = ScenarioState.initial(3, 0.0)
F0 = FiltrationState(0.0)


def test_single_name_survival():
    m = DefaultLawModel.independent(curves(0.1))
    rep = first_to_default_survival(m, ScenarioState.initial(1, 0.0), F0, 5.0)
    assert abs(rep.value - np.exp(-0.5)) < 1e-12


def test_independent_first_to_default_closed_form():
    rep = first_to_default_survival(IND3, T0, F0, 4.0)
    assert rep.value == pytest.approx(np.exp(-4.0 * sum(RATES)), abs=1e-13)


def test_first_equals_kth_one_bitwise():
    m = DefaultLawModel.clayton(curves(0.15, 0.2), 2.0)
    st0 = ScenarioState.initial(2, 0.0)
    assert first_to_default_survival(m, st0, F0, 3.0).value == kth_to_default_survival(m, 1, st0, F0, 3.0).value


def _poisson_binomial(q):
    dist = np.array([1.0])
    for p in q:
        dist = np.convolve(dist, [1 - p, p])
    return dist


def test_independent_kth_and_loss_call_closed_forms():
    T = 5.0
    q = 1 - np.exp(-np.array(RATES) * T)
    dist = _poisson_binomial(q)
    for k in (1, 2, 3):
        rep = kth_to_default_survival(IND3, k, T0, F0, T)
        assert rep.value == pytest.approx(dist[:k].sum(), abs=1e-12)
    R, a = 0.4, 0.5
    ref = sum(p * max(R * m - a, 0.0) for m, p in enumerate(dist))
    assert loss_call(IND3, a, R, T0, F0, T).value == pytest.approx(ref, abs=1e-12)


def test_loss_call_limits():
    T, R = 5.0, 0.4
    assert loss_call(IND3, 0.0, R, T0, F0, T).value == pytest.approx(R * sum(1 - np.exp(-np.array(RATES) * T)), abs=1e-12)
    assert loss_call(IND3, 3 * R, R, T0, F0, T).value == 0.0
    assert loss_call(IND3, 2.0, R, T0, F0, T).value == 0.0


def test_loss_call_monotone_and_convex_in_strike():
    m = DefaultLawModel.clayton(curves(0.15, 0.2, 0.25), 1.0)
    strikes = np.linspace(0.0, 1.2, 13)
    vals = np.array([loss_call(m, a, 0.4, T0, F0, 5.0).value for a in strikes])
    assert (np.diff(vals) <= 1e-12).all()
    assert (np.diff(vals, 2) >= -1e-12).all()


@given(st.floats(0.0, 1.2), st.floats(0.0, 1.2), st.floats(0.05, 1.0))
def test_tranche_is_difference_of_calls(a, b, R):
    a, b = min(a, b), max(a, b)
    tr = tranche_price(IND3, a, b, R, T0, F0, 5.0).value
    diff = loss_call(IND3, a, R, T0, F0, 5.0).value - loss_call(IND3, b, R, T0, F0, 5.0).value
    assert tr == pytest.approx(diff, abs=1e-12)


@given(st.integers(0, 3), st.floats(0.0, 1.5), st.floats(0.01, 1.0))
def test_ladder_identity(mcount, a, R):
    w = ladder_weights(3, a, R)
    assert R * w[:mcount].sum() == pytest.approx(max(mcount * R - a, 0.0), abs=1e-12)


def test_tranche_argument_rules():
    with pytest.raises(ConfigurationError):
        tranche_price(IND3, 0.8, 0.4, 0.4, T0, F0, 5.0)
    assert tranche_price(IND3, 0.4, 0.4, 0.4, T0, F0, 5.0).value == 0.0
    with pytest.raises(ConfigurationError):
        loss_call(IND3, 0.0, 1.5, T0, F0, 5.0)


def test_conditional_price_after_default_independent():
    """After name 1 defaults, the others keep their own survival under independence."""
    st_ = ScenarioState(NameSet.of(3, [0]), (0.5,), 1.0)
    rep = kth_to_default_survival(IND3, 2, st_, FiltrationState(1.0), 5.0)
    assert rep.value == pytest.approx(np.exp(-4.0 * (0.2 + 0.25)), abs=1e-12)


def test_price_is_constant_payoff_times_one():
    m = DefaultLawModel.gaussian(curves(*RATES), gaussian_corr(3, 0.3))
    rep = price_general(m, DecomposedPayoff.constant(3, 5.0, 2.5), T0, F0)
    assert rep.value == pytest.approx(2.5, abs=1e-9)


def test_maturity_before_observation_is_rejected():
    with pytest.raises(DomainError):
        kth_to_default_survival(IND3, 1, ScenarioState.initial(3, 2.0), FiltrationState(2.0), 1.0)


@pytest.mark.parametrize(
    "model,k,t",
    [
        (IND3, 2, 0.0),
        (DefaultLawModel.gaussian(curves(*RATES[:2]), gaussian_corr(2, 0.3)), 1, 1.0),
    ],
)
def test_price_vs_monte_carlo(model, k, t):
    T = 5.0
    payoff = kth_survival_payoff(model.n, k, T)
    bins = estimate_price(model, payoff, t, 400_000, 17, bins=1)
    for b in bins:
        if len(b.J):
            continue
        rep = kth_to_default_survival(model, k, ScenarioState.initial(model.n, t), FiltrationState(t), T)
        assert b.estimate.agrees(rep.value, 3.0, rep.error_bound)
