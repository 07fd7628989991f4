import json
import math

import numpy as np
import pytest
from scipy import integrate, optimize

from conftest import curves
from multidefault.contagion import Coefficient, ContagionAssetSpec, StrategyFamily, terminal_wealth
from multidefault.errors import ConfigurationError, ValueFunctionInfinite
from multidefault.law import DefaultLawModel, FactorChain
from multidefault.optimizer import (
    OptimizationReport,
    OptimizerSettings,
    Utility,
    merton,
    policy_shares,
    solve,
    terminal_utility_closed_form,
    verify_global,
)

MU, SIG = 0.08, 0.2


def one_name(gamma, lam=0.3, mu=MU, sig=SIG):
    return DefaultLawModel.independent(curves(lam)), ContagionAssetSpec.uniform(1, [mu], [[sig]], [gamma])


def test_closed_form_log_case():
    # pi = 1, mu = sigma^2: growth is sigma^2 / 2
    v = terminal_utility_closed_form([0.04], [[0.2]], [1.0], 2.0, 1.0, 3.0, Utility(1.0))
    assert v == pytest.approx(math.log(2.0) + 0.5 * 0.04 * 2.0, abs=1e-15)


def test_closed_form_power_case_vs_monte_carlo():
    u = Utility(2.0)
    law = DefaultLawModel.independent(curves(1e-12))
    spec = ContagionAssetSpec.uniform(1, [MU], [[SIG]])
    f = StrategyFamily.constant(1, 2.0, {0: [0.9], 1: [0.9]})
    lx = terminal_wealth(spec, law, f, 1.0, 2.0, 400_000, 1).log_wealth
    y = u.of_log(lx)
    ref = terminal_utility_closed_form([MU], [[SIG]], [0.9], 1.0, 0.0, 2.0, u)
    assert abs(y.mean() - ref) < 3 * y.std() / np.sqrt(y.size)


def test_merton_and_unbounded_value():
    pi, r = merton([MU], [[SIG]], 2.0)
    assert pi[0] == pytest.approx(MU / (2.0 * SIG**2)) and r == pytest.approx(MU**2 / (4 * SIG**2))
    with pytest.raises(ValueFunctionInfinite):
        merton([0.05, 0.06], [[0.2, 0.0], [0.2, 0.0]], 2.0)


@pytest.mark.parametrize("p", [2.0, 0.5, 1.0])
def test_no_jump_degenerates_to_merton(p):
    law, spec = one_name(0.0)
    u = Utility(p)
    rep = solve(law, spec, u, 1.0, 2.0, OptimizerSettings(grid=5, intervals=2))
    pi, r = merton([MU], [[SIG]], p)
    ref = terminal_utility_closed_form([MU], [[SIG]], pi, 1.0, 0.0, 2.0, u)
    assert rep.value == pytest.approx(ref, rel=1e-6, abs=1e-12)
    for tab in rep.table.tables.values():
        assert np.allclose(tab.pi, pi[0], atol=1e-6)


def test_terminal_node_continues_left_neighbour():
    law = DefaultLawModel.independent(curves(0.3, 0.2))
    spec = ContagionAssetSpec.uniform(2, [MU], [[SIG]], [[0.3], [0.4]])
    rep = solve(law, spec, Utility(2.0), 1.0, 2.0, OptimizerSettings(grid=4, intervals=2))
    tab = rep.table.tables[1]
    assert not tab.closed_form and tab.nodes[-1] == 2.0
    assert np.array_equal(tab.pi[-1], tab.pi[-2]) and np.all(tab.pi[-1] != 0.0)
    assert tab.coef[-1] == pytest.approx(1.0, abs=1e-15)


def test_log_utility_matches_myopic_quadrature_oracle():
    """Log investors are myopic: before default they maximize growth plus hazard times log jump loss."""
    lam, g, T = 0.3, 0.4, 2.0
    law, spec = one_name(g, lam)
    rep = solve(law, spec, Utility(1.0), 1.0, T, OptimizerSettings(grid=5, intervals=2))
    h = lambda x: -(x * MU - 0.5 * x * x * SIG**2 + lam * math.log1p(-x * g))
    star = optimize.minimize_scalar(h, bounds=(-10, 1 / g - 1e-9), method="bounded", options={"xatol": 1e-12}).x
    pre, post = -h(star), MU**2 / (2 * SIG**2)
    # survival-weighted pre-default rate plus the post-default Merton rate
    ref = integrate.quad(lambda t: math.exp(-lam * t) * pre + (1 - math.exp(-lam * t)) * post, 0, T, epsabs=1e-14)[0]
    assert rep.value == pytest.approx(ref, abs=1e-7)
    assert rep.table.tables[0].pi[0, 0, 0] == pytest.approx(star, abs=1e-5)


def test_constant_strategy_grid_search_oracle():
    """With one interval per scenario the optimizer must match a brute-force search of exact policy values."""
    law, spec = one_name(0.4)
    u, T = Utility(2.0), 2.0
    rep = solve(law, spec, u, 1.0, T, OptimizerSettings(grid=3, intervals=1))
    post = merton([MU], [[SIG]], 2.0)[0][0]
    best = -np.inf
    for x in np.linspace(-1.0, 2.0, 51):
        f = StrategyFamily.constant(1, T, {0: [x], 1: [post]})
        best = max(best, sum(policy_shares(law, spec, u, f, 1.0, T).values()))
    assert rep.value >= best - 1e-9
    assert rep.value == pytest.approx(best, rel=1e-3)


def test_value_scaling_in_initial_wealth():
    law, spec = one_name(0.4)
    settings = OptimizerSettings(grid=3, intervals=2)
    a = solve(law, spec, Utility(2.0), 1.0, 2.0, settings)
    b = solve(law, spec, Utility(2.0), 3.0, 2.0, settings)
    assert b.value == pytest.approx(a.value * 3.0 ** (1 - 2.0), rel=1e-10)
    la = solve(law, spec, Utility(1.0), 1.0, 2.0, settings)
    lb = solve(law, spec, Utility(1.0), 3.0, 2.0, settings)
    assert lb.value - la.value == pytest.approx(math.log(3.0), abs=1e-10)


def test_dominated_asset():
    """A driftless asset that only loses at defaults is never held long."""
    law, spec = one_name(0.3, mu=0.0)
    long_only = solve(law, spec, Utility(2.0), 1.0, 1.0, OptimizerSettings(grid=3, intervals=2, long_only=True))
    assert np.all(long_only.table.tables[0].pi == 0.0)
    free = solve(law, spec, Utility(2.0), 1.0, 1.0, OptimizerSettings(grid=3, intervals=2))
    assert np.all(free.table.tables[0].pi <= 1e-9)


def test_perturbed_strategy_fails_value_check():
    law, spec = one_name(0.4)
    rep = solve(law, spec, Utility(2.0), 1.0, 2.0, OptimizerSettings(grid=5, intervals=2))
    good = verify_global(rep, law, spec, 200_000, 3, families=0)
    assert good["a"]["passed"] and good["c"]["passed"]
    s = rep.strategy
    bumped = StrategyFamily(s.n, s.N, s.T, s.nodes, {b: v + 0.5 for b, v in s.values.items()})
    bad = verify_global(rep, law, spec, 200_000, 3, families=0, strategy=bumped)
    assert not bad["a"]["passed"]


def test_report_json_round_trip():
    law, spec = one_name(0.4)
    rep = solve(law, spec, Utility(2.0), 1.0, 2.0, OptimizerSettings(grid=3, intervals=2))
    back = OptimizationReport.from_dict(json.loads(rep.to_json()))
    assert back.to_json() == rep.to_json()
    assert back.value == rep.value


def test_restrictions_are_rejected():
    spec1 = ContagionAssetSpec.uniform(2, [MU], [[SIG]], [0.2])
    factor = DefaultLawModel.independent(curves(0.2, 0.3)).factor_scaled(FactorChain((0.5, 1.5), (0.5, 0.5), 1.0))
    with pytest.raises(ConfigurationError, match="optimizer state reduction"):
        solve(factor, spec1, Utility(2.0), 1.0, 1.0)
    clayton3 = DefaultLawModel.clayton(curves(0.2, 0.3, 0.1), 1.0)
    with pytest.raises(ConfigurationError, match="optimizer state reduction"):
        solve(clayton3, ContagionAssetSpec.uniform(3, [MU], [[SIG]], [0.2]), Utility(2.0), 1.0, 1.0)
    drift = {b: Coefficient([MU]) for b in range(4)}
    drift[3] = Coefficient([MU], by_name={0: [0.01]})
    vol = {b: Coefficient([[SIG]]) for b in range(4)}
    named = ContagionAssetSpec(2, 1, drift, vol, spec1.gamma)
    with pytest.raises(ConfigurationError, match="optimizer state reduction"):
        solve(DefaultLawModel.independent(curves(0.2, 0.3)), named, Utility(2.0), 1.0, 1.0)


@pytest.mark.slow
def test_dense_grid_search_oracle_on_sampled_nodes():
    """Per-node maximization vs a 51^3 grid over three interval proportions of one asset."""
    from multidefault.optimizer import _ScenarioProblem
    from multidefault.scenarios import NameSet

    law = DefaultLawModel.clayton(curves(0.3, 0.2), 2.0)
    spec = ContagionAssetSpec.uniform(2, [MU], [[SIG]], [[0.3], [0.4]])
    u, T = Utility(2.0), 2.0
    settings = OptimizerSettings(grid=3, intervals=3)
    rep = solve(law, spec, u, 1.0, T, settings)
    axis = np.linspace(-1.5, 3.0, 51)
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3, 1)
    for I, j in ((NameSet.empty(2), 0), (NameSet.of(2, [0]), 1), (NameSet.of(2, [1]), 0)):
        tab = rep.table.tables[I.bits]
        a = float(tab.nodes[j])
        prob = _ScenarioProblem(law, spec, u, I, a, T, 3, settings.quad_nodes, settings.eval_floor, rep.table.coefficient)
        brute = max(prob.score(pi) for pi in grid)
        found = prob.score(tab.pi[j])
        assert found >= brute - 1e-12
        assert abs(found - brute) <= 1e-3 * abs(brute)
