"""Backward-recursive expected-utility maximization under contagion.

For CRRA utility the scenario value functions are homothetic in wealth. We
store them normalized by the probability that no further default has
happened by the latest default time ``a = s_vee``:

    V_I(x, s_I) = H_I(s_I; a) * U(x) * K_I(a)        (p != 1)
    V_I(x, s_I) = H_I(s_I; a) * (log x + L_I(a))     (p == 1)

with ``H_I(s_I; a) = int_{(a, inf)^{I^c}} alpha(s_I, y) dy``. Dividing the
recursion by ``H_I`` leaves the conditional probabilities

    P_I(a)    = H_I(s_I; T) / H_I(s_I; a)                  no default by T
    q_i(a, v) = H_{I+i}((s_I, v); v) / H_I(s_I; a)          next default is i at v

and for a strategy that is constant on ``m`` intervals of ``(a, T]``

    K_I(a) = max  G(T) P_I + sum_i int_a^T q_i(v) G(v) (1 - pi(v).gamma^{I,i})^(1-p) K_{I+i}(v) dv
    G(v)   = exp((1-p) int_a^v (pi.mu - p/2 |pi Sigma|^2) du)

(maximized in the sense of ``U``; for ``p > 1`` this means minimizing
``K``). The log case is analogous with additive terms. ``K_Theta`` is the
Merton value in closed form.

The reduction to a one-dimensional state ``a`` needs ``P_I`` and ``q_i`` to
depend on ``s_I`` only through ``a``. That holds for independent hazards and
for any copula with at most two names; other models are rejected.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import rng as rngmod
from .contagion import ContagionAssetSpec, StrategyFamily
from .errors import ConfigurationError, DomainError, StructuralError, ValueFunctionInfinite
from .law import DefaultLawModel
from .scenarios import NameSet, enumerate_scenarios

OVERFLOW_GUARD = 1e300
CONSTRAINT_MARGIN = 1e-6
MAX_OPTIMIZER_NAMES = 6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Utility:
    """CRRA utility with relative risk aversion ``p``; ``p = 1`` is logarithmic."""

    p: float

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 0:
            raise ConfigurationError("relative risk aversion must be positive")

    @property
    def is_log(self) -> bool:
        return self.p == 1.0

    @property
    def beta(self) -> float:
        return 1.0 - self.p

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.is_log:
            return np.log(x)
        return np.exp(self.beta * np.log(x)) / self.beta

    def of_log(self, log_x):
        """``U(exp(log_x))`` without forming the exponential first."""
        log_x = np.asarray(log_x, dtype=float)
        if self.is_log:
            return log_x
        return np.exp(self.beta * log_x) / self.beta

    def value(self, x: float, coef: float) -> float:
        """Normalized value from the stored coefficient."""
        return float(np.log(x) + coef) if self.is_log else float(self(x) * coef)


def growth_rate(pi, mu, sigma, p: float) -> np.ndarray:
    """``pi.mu - p/2 |pi Sigma|^2`` row-wise; the certainty-equivalent growth of CRRA wealth."""
    pi = np.atleast_2d(pi)
    sig = pi @ np.asarray(sigma)
    return pi @ np.asarray(mu) - 0.5 * p * np.einsum("ij,ij->i", sig, sig)


def terminal_utility_closed_form(mu, sigma, pi, x: float, t0: float, T: float, utility: Utility, weight: float = 1.0) -> float:
    """``E[U(X_T)] * weight`` for constant proportions ``pi`` and no defaults on ``[t0, T]``."""
    r = float(growth_rate(np.asarray(pi, dtype=float), mu, sigma, utility.p)[0])
    if utility.is_log:
        return (math.log(x) + r * (T - t0)) * weight
    return float(utility(x)) * math.exp(utility.beta * r * (T - t0)) * weight


def merton(mu, sigma, p: float) -> tuple[np.ndarray, float]:
    """Unconstrained maximizer of ``pi.mu - p/2 pi' C pi`` and its value, ``C = Sigma Sigma'``."""
    mu = np.asarray(mu, dtype=float)
    C = np.asarray(sigma) @ np.asarray(sigma).T
    pi, *_ = np.linalg.lstsq(C, mu / p, rcond=None)
    if not np.allclose(C @ pi, mu / p, atol=1e-12, rtol=1e-9):
        raise ValueFunctionInfinite(
            "drift has a component outside the volatility range; the terminal value is unbounded"
        )
    return pi, float(pi @ mu - 0.5 * p * pi @ C @ pi)


@dataclass(frozen=True)
class OptimizerSettings:
    grid: int = 11
    intervals: int = 8
    quad_nodes: int = 24
    starts: int = 5
    bound: float = 10.0
    tol: float = 1e-10
    max_sweeps: int = 200
    long_only: bool = False
    seed: int = 0
    eval_floor: float = 1e-8

    def __post_init__(self):
        if self.grid < 2 or self.intervals < 1 or self.quad_nodes < 2 or self.starts < 2:
            raise ConfigurationError("optimizer needs grid >= 2, intervals >= 1, quad_nodes >= 2, starts >= 2")
        if not self.bound > 0:
            raise ConfigurationError("strategy bound must be positive")


def check_reducible(model: DefaultLawModel, spec: ContagionAssetSpec) -> None:
    """Reject models whose value functions do not reduce to the latest default time."""
    if model.n != spec.n:
        raise ConfigurationError("default law and asset spec name counts differ")
    if model.n > MAX_OPTIMIZER_NAMES:
        raise ConfigurationError(f"the optimizer supports at most {MAX_OPTIMIZER_NAMES} names")
    if model.factor is not None:
        raise ConfigurationError(
            "optimizer state reduction: a factor-driven default law makes values depend on the factor path; "
            "use a deterministic hazard model"
        )
    if model.copula.kind != "independent" and model.n > 2:
        raise ConfigurationError(
            "optimizer state reduction: with more than two names only independent hazards make the "
            "conditional default law depend on the latest default time alone"
        )
    if not spec.reduced:
        raise ConfigurationError(
            "optimizer state reduction: asset coefficients may depend on the default times only through "
            "the latest one"
        )


class _ScenarioProblem:
    """Objective ``Phi(pi)`` for scenario ``I`` at latest default time ``a``."""

    def __init__(self, model, spec, utility, I: NameSet, a: float, T: float, intervals, quad_nodes, eval_floor, child_coef=None):
        self.I, self.a, self.T = I, a, T
        self.p, self.beta, self.is_log = utility.p, utility.beta, utility.is_log
        self.m = intervals
        self.h = (T - a) / self.m
        self.mu, sigma = spec.coefficients(I.bits, a)
        self.C = sigma @ sigma.T
        self.sigma = sigma
        self.survivors = I.complement().indices
        self.gammas = np.array([spec.jump(I.bits, i) for i in self.survivors])  # (nc, N)

        s_rep = max(a, eval_floor * T)
        k = model.n - len(I)
        sI = np.full((1, len(I)), s_rep)
        den = model.component_mass(0, I, sI, np.full(k, a), np.full(k, np.inf))[0]
        if not den > 0:
            raise ValueFunctionInfinite(f"scenario {I} has zero conditional mass at a={a}")
        self.P = model.component_mass(0, I, sI, np.full(k, T), np.full(k, np.inf))[0] / den

        edges = {a + self.h * j for j in range(self.m + 1)}
        for h in model.hazards:
            edges.update(b for b in h.breaks if a < b < T)
        edges = np.array(sorted(edges))
        x, w = np.polynomial.legendre.leggauss(quad_nodes)
        lo, hi = edges[:-1, None], edges[1:, None]
        self.v = (lo + (hi - lo) * (x + 1) / 2).ravel()
        self.w = ((hi - lo) / 2 * w).ravel()
        self.k_of_v = np.clip(((self.v - a) / self.h).astype(np.int64), 0, self.m - 1)
        starts = a + self.h * np.arange(self.m)
        self.overlap = np.clip(self.v[:, None] - starts[None, :], 0.0, self.h)  # (M, m)

        self.q = np.empty((len(self.survivors), self.v.size))
        self.child = np.empty_like(self.q)
        for col, i in enumerate(self.survivors):
            Ii = I.union(i)
            order = list(Ii.indices)
            pos = order.index(i)
            rest = model.n - len(Ii)
            for j, v in enumerate(self.v):
                s = np.full(len(Ii), s_rep)
                s[pos] = v
                self.q[col, j] = model.component_mass(0, Ii, s[None, :], np.full(rest, v), np.full(rest, np.inf))[0] / den
            if child_coef is not None:
                self.child[col] = child_coef(Ii, self.v)
        self.qw = self.q * self.w[None, :]

    def phi(self, pi: np.ndarray) -> float:
        """Normalized objective (``K`` or ``L``) for interval proportions ``pi`` of shape ``(m, N)``."""
        sig = pi @ self.sigma
        var = np.einsum("ij,ij->i", sig, sig)
        exposure = 1.0 - pi[self.k_of_v] @ self.gammas.T  # (M, nc)
        if (exposure <= 0).any():
            return -np.inf if self.beta >= 0 or self.is_log else np.inf
        if self.is_log:
            ell = pi @ self.mu - 0.5 * var
            growth = self.overlap @ ell
            total = self.P * self.h * ell.sum()
            total += np.sum(self.qw * (growth[None, :] + np.log(exposure).T + self.child))
            return float(total)
        r = pi @ self.mu - 0.5 * self.p * var
        G = np.exp(self.beta * (self.overlap @ r))
        total = self.P * math.exp(self.beta * self.h * r.sum())
        total += np.sum(self.qw * G[None, :] * np.exp(self.beta * np.log(exposure).T) * self.child)
        return float(total)

    def score(self, pi: np.ndarray) -> float:
        """Quantity to maximize: ``Phi`` for log and ``p < 1``, ``-Phi`` for ``p > 1``."""
        val = self.phi(pi)
        if self.is_log or self.beta > 0:
            return val
        return -val

    def feasible_interval(self, pi, k: int, l: int, bound: float, long_only: bool) -> tuple[float, float]:
        lo, hi = (0.0 if long_only else -bound), bound
        for g in self.gammas:
            if g[l] <= 0:
                continue
            other = pi[k] @ g - pi[k, l] * g[l]
            hi = min(hi, (1.0 - CONSTRAINT_MARGIN - other) / g[l])
        return lo, max(lo, hi)

    def project(self, pi: np.ndarray, bound: float, long_only: bool) -> np.ndarray:
        pi = np.clip(pi, 0.0 if long_only else -bound, bound)
        for k in range(self.m):
            if self.gammas.size:
                worst = float(np.max(self.gammas @ pi[k]))
                limit = 1.0 - CONSTRAINT_MARGIN
                if worst > limit:
                    pi[k] *= limit / worst * (1 - 1e-12)
        return pi


def _golden_max(f, lo: float, hi: float, x0: float, tol: float) -> tuple[float, float, int]:
    """Maximize a unimodal ``f`` on ``[lo, hi]`` starting near ``x0``; returns (x, f(x), evaluations)."""
    evals = 0

    def F(x):
        nonlocal evals
        evals += 1
        return f(x)

    if hi - lo <= tol:
        x = 0.5 * (lo + hi)
        return x, F(x), evals
    # expand a bracket around x0 before the golden-section phase
    step = max(1e-3, 0.05 * (hi - lo))
    fx = F(x0)
    a, b = max(lo, x0 - step), min(hi, x0 + step)
    fa, fb = F(a), F(b)
    while fa > fx and a > lo:
        b, fb, x0, fx = x0, fx, a, fa
        step *= 1.0 / _GOLDEN
        a = max(lo, x0 - step)
        fa = F(a)
    while fb > fx and b < hi:
        a, fa, x0, fx = x0, fx, b, fb
        step *= 1.0 / _GOLDEN
        b = min(hi, x0 + step)
        fb = F(b)
    # golden section on [a, b]
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = F(c), F(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = F(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = F(d)
    cands = [(fc, c), (fd, d), (fx, x0)]
    # snap to an active bound when it is at least as good
    for edge in (lo, hi):
        if abs(edge - c) <= 10 * tol or abs(edge - d) <= 10 * tol:
            cands.append((F(edge), edge))
    fbest, xbest = max(cands, key=lambda t: (t[0], -abs(t[1])))
    return xbest, fbest, evals


@dataclass(frozen=True)
class NodeResult:
    a: float
    coef: float
    pi: np.ndarray
    sweeps: int
    evaluations: int
    active: tuple[bool, ...]
    start: str


def _optimize_node(problem: _ScenarioProblem, settings: OptimizerSettings, merton_pi, gen) -> NodeResult:
    m, N = problem.m, problem.mu.size
    if problem.h <= 0:
        pi = np.zeros((m, N))
        return NodeResult(problem.a, problem.phi(pi), pi, 0, 1, (False,) * m, "terminal")
    starts = [("zero", np.zeros((m, N))), ("merton", np.tile(merton_pi, (m, 1)))]
    for r in range(settings.starts - 2):
        starts.append((f"random{r}", gen.uniform(-1.0, 1.0, (m, N)) * min(settings.bound, 2.0)))
    best = None
    total_evals = 0
    for label, pi0 in starts:
        pi = problem.project(pi0.copy(), settings.bound, settings.long_only)
        score = problem.score(pi)
        total_evals += 1
        sweeps = 0
        for sweeps in range(1, settings.max_sweeps + 1):
            moved = 0.0
            for k in range(m):
                for l in range(N):
                    lo, hi = problem.feasible_interval(pi, k, l, settings.bound, settings.long_only)
                    x0 = min(max(pi[k, l], lo), hi)

                    def f(x, k=k, l=l):
                        trial = pi.copy()
                        trial[k, l] = x
                        return problem.score(trial)

                    x, fx, ev = _golden_max(f, lo, hi, x0, settings.tol)
                    total_evals += ev
                    if fx >= score:
                        moved = max(moved, abs(x - pi[k, l]))
                        pi[k, l] = x
                        score = fx
            if moved <= 10 * settings.tol:
                break
        if not np.isfinite(score) or abs(score) > OVERFLOW_GUARD:
            raise ValueFunctionInfinite(
                f"objective for scenario {problem.I} at a={problem.a:.6g} exceeds {OVERFLOW_GUARD:g}; "
                "the finiteness hypothesis on the value functions fails"
            )
        cand = (score, -float(np.abs(pi).sum()), label, pi.copy(), sweeps)
        if best is None or cand[0] > best[0] + 1e-12 * max(1.0, abs(best[0])):
            best = cand
        elif abs(cand[0] - best[0]) <= 1e-12 * max(1.0, abs(best[0])) and cand[1] > best[1]:
            best = cand
    score, _, label, pi, sweeps = best
    active = []
    for k in range(m):
        exp = problem.gammas @ pi[k] if problem.gammas.size else np.zeros(1)
        active.append(bool(np.any(exp >= 1.0 - CONSTRAINT_MARGIN - 1e-9)))
    return NodeResult(problem.a, problem.phi(pi), pi, sweeps, total_evals, tuple(active), label)


@dataclass(frozen=True)
class ScenarioTable:
    """Solved scenario: nodes in ``a``, normalized coefficients and optimal proportions."""

    I: NameSet
    nodes: np.ndarray
    coef: np.ndarray
    pi: np.ndarray  # (G, m, N)
    closed_form: bool = False
    merton_rate: float | None = None
    diagnostics: tuple[dict, ...] = ()


@dataclass(frozen=True)
class ValueTable:
    utility: Utility
    T: float
    n: int
    N: int
    tables: Mapping[int, ScenarioTable] = field(repr=False)

    def coefficient(self, I: NameSet, a) -> np.ndarray:
        """Normalized coefficient ``K_I(a)`` (or ``L_I(a)``) at arbitrary latest-default times."""
        tab = self.tables.get(I.bits)
        if tab is None:
            raise StructuralError(f"value table for scenario {I} is not available yet")
        a = np.asarray(a, dtype=float)
        if tab.closed_form:
            r = tab.merton_rate if tab.merton_rate is not None else 0.0
            if tab.merton_rate is None:
                return np.interp(a, tab.nodes, tab.coef)
            if self.utility.is_log:
                return r * (self.T - a)
            return np.exp(self.utility.beta * r * (self.T - a))
        if tab.nodes.size == 1:
            return np.full(a.shape, tab.coef[0])
        if self.utility.is_log:
            return PchipInterpolator(tab.nodes, tab.coef)(a)
        return np.exp(PchipInterpolator(tab.nodes, np.log(tab.coef))(a))

    def value(self, I: NameSet, x: float, a: float) -> float:
        """Normalized value ``V_I / H_I`` at wealth ``x`` and latest default ``a``."""
        return self.utility.value(x, float(self.coefficient(I, a)))

    def strategy(self) -> StrategyFamily:
        return StrategyFamily(
            self.n,
            self.N,
            self.T,
            {b: t.nodes for b, t in self.tables.items()},
            {b: t.pi for b, t in self.tables.items()},
        )


def _merton_table(spec, utility, I: NameSet, nodes: np.ndarray, T: float) -> ScenarioTable:
    pis, rates = [], []
    for a in nodes:
        mu, sigma = spec.coefficients(I.bits, a)
        pi, r = merton(mu, sigma, utility.p)
        pis.append(pi)
        rates.append(r)
    rates = np.asarray(rates)
    pis = np.asarray(pis)[:, None, :]
    constant = np.allclose(rates, rates[0], rtol=0, atol=0)
    if utility.is_log:
        coef = rates * (T - nodes)
    else:
        coef = np.exp(utility.beta * rates * (T - nodes))
    if (np.abs(coef) > OVERFLOW_GUARD).any() or not np.isfinite(coef).all():
        raise ValueFunctionInfinite(f"Merton value of scenario {I} overflows")
    return ScenarioTable(I, nodes, coef, pis, True, float(rates[0]) if constant else None)


def optimize_scenario(
    I: NameSet,
    nodes: np.ndarray,
    table: ValueTable,
    model: DefaultLawModel,
    spec: ContagionAssetSpec,
    utility: Utility,
    T: float,
    settings: OptimizerSettings = OptimizerSettings(),
    threads: int = 1,
) -> ScenarioTable:
    """Solve scenario ``I`` on the given nodes; every child ``I + {i}`` must already be in ``table``."""
    if I.is_full():
        return _merton_table(spec, utility, I, nodes, T)
    for i in I.complement():
        if I.union(i).bits not in table.tables:
            raise StructuralError(f"child scenario {I.union(i)} of {I} has not been solved")

    def child(Ii, v):
        return table.coefficient(Ii, v)

    def solve_node(j: int) -> NodeResult:
        a = float(nodes[j])
        problem = _ScenarioProblem(
            model, spec, utility, I, a, T, settings.intervals, settings.quad_nodes, settings.eval_floor, child
        )
        try:
            mpi, _ = merton(problem.mu, problem.sigma, utility.p)
        except ValueFunctionInfinite:
            mpi = np.zeros(problem.mu.size)
        gen = rngmod.stream(settings.seed, rngmod.OPTIMIZER_STARTS, I.bits, j)
        return _optimize_node(problem, settings, mpi, gen)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_node, range(nodes.size)))
    else:
        results = [solve_node(j) for j in range(nodes.size)]
    coef = np.array([r.coef for r in results])
    if not utility.is_log and (coef <= 0).any():
        raise ValueFunctionInfinite(f"non-positive value coefficient in scenario {I}")
    diags = tuple(
        {"a": r.a, "sweeps": r.sweeps, "evaluations": r.evaluations, "active": list(r.active), "start": r.start}
        for r in results
    )
    pi = np.array([r.pi for r in results])
    # no time is left at a = T, so any proportions are optimal there; continue the
    # left neighbour's so interpolation in the last cell is not pulled towards zero
    for j in range(1, len(results)):
        if results[j].start == "terminal":
            pi[j] = pi[j - 1]
    return ScenarioTable(I, np.asarray(nodes, dtype=float), coef, pi, False, None, diags)


def scenario_nodes(I: NameSet, T: float, grid: int) -> np.ndarray:
    if len(I) == 0:
        return np.zeros(1)
    return np.linspace(0.0, T, grid)


@dataclass(frozen=True)
class OptimizationReport:
    value: float
    x0: float
    utility: Utility
    T: float
    table: ValueTable = field(repr=False)
    settings: OptimizerSettings = field(repr=False)
    solve_order: tuple[int, ...] = ()
    verification: dict | None = None

    @property
    def strategy(self) -> StrategyFamily:
        return self.table.strategy()

    @property
    def coefficient(self) -> float:
        return float(self.table.coefficient(NameSet.empty(self.table.n), 0.0))

    def with_verification(self, record: dict) -> "OptimizationReport":
        return OptimizationReport(
            self.value, self.x0, self.utility, self.T, self.table, self.settings, self.solve_order, record
        )

    def to_dict(self) -> dict:
        tables = {}
        for b, t in sorted(self.table.tables.items()):
            tables[t.I.label()] = {
                "mask": b,
                "nodes": t.nodes.tolist(),
                "coefficient": t.coef.tolist(),
                "pi": t.pi.tolist(),
                "closed_form": t.closed_form,
                "merton_rate": t.merton_rate,
                "diagnostics": list(t.diagnostics),
            }
        return {
            "value": self.value,
            "x0": self.x0,
            "risk_aversion": self.utility.p,
            "T": self.T,
            "n": self.table.n,
            "N": self.table.N,
            "settings": {k: getattr(self.settings, k) for k in self.settings.__dataclass_fields__},
            "solve_order": [NameSet(b, self.table.n).label() for b in self.solve_order],
            "tables": tables,
            "verification": self.verification,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizationReport":
        utility = Utility(float(d["risk_aversion"]))
        n, N, T = int(d["n"]), int(d["N"]), float(d["T"])
        tables = {}
        for t in d["tables"].values():
            b = int(t["mask"])
            tables[b] = ScenarioTable(
                NameSet(b, n),
                np.asarray(t["nodes"], dtype=float),
                np.asarray(t["coefficient"], dtype=float),
                np.asarray(t["pi"], dtype=float),
                bool(t["closed_form"]),
                t["merton_rate"],
                tuple(t.get("diagnostics", ())),
            )
        order_labels = d.get("solve_order", [])
        lookup = {NameSet(b, n).label(): b for b in range(1 << n)}
        return cls(
            float(d["value"]),
            float(d["x0"]),
            utility,
            T,
            ValueTable(utility, T, n, N, tables),
            OptimizerSettings(**d["settings"]),
            tuple(lookup[s] for s in order_labels),
            d.get("verification"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def solve(
    model: DefaultLawModel,
    spec: ContagionAssetSpec,
    utility: Utility,
    x0: float,
    T: float,
    settings: OptimizerSettings = OptimizerSettings(),
    threads: int = 1,
) -> OptimizationReport:
    """Backward recursion from the all-defaulted scenario down to the empty one."""
    check_reducible(model, spec)
    if x0 <= 0:
        raise DomainError("initial wealth must be positive")
    if not 0 < T <= model.horizon:
        raise DomainError("horizon must be positive and within the model horizon")
    n = model.n
    tables: dict[int, ScenarioTable] = {}
    order = []
    scenarios = enumerate_scenarios(n)
    for card in range(n, -1, -1):
        # a level only reads tables of the level above, which are frozen by now
        snapshot = ValueTable(utility, T, n, spec.N, dict(tables))
        for I in (s for s in scenarios if len(s) == card):
            tables[I.bits] = optimize_scenario(
                I, scenario_nodes(I, T, settings.grid), snapshot, model, spec, utility, T, settings, threads
            )
            order.append(I.bits)
    table = ValueTable(utility, T, n, spec.N, tables)
    coef = float(table.coefficient(NameSet.empty(n), 0.0))
    return OptimizationReport(utility.value(x0, coef), x0, utility, T, table, settings, tuple(order))


def _problem_for_policy(model, spec, utility, strategy: StrategyFamily, I: NameSet, a: float, T: float, quad_nodes: int, eval_floor: float):
    m = strategy.intervals(I.bits)
    return _ScenarioProblem(model, spec, utility, I, a, T, m, quad_nodes, eval_floor), strategy.table(I.bits, a)


def policy_shares(
    model: DefaultLawModel,
    spec: ContagionAssetSpec,
    utility: Utility,
    strategy: StrategyFamily,
    x0: float,
    T: float,
    quad_nodes: int = 16,
    eval_floor: float = 1e-8,
) -> dict[int, float]:
    """Exact ``E[U(X_T); terminal scenario = K]`` for a given strategy family.

    Nested Gauss-Legendre quadrature over successive default times with the
    strategy evaluated exactly where it is used; no value interpolation. Cost
    grows like ``(quad points)^depth``, so it is meant for up to three names.
    """
    check_reducible(model, spec)
    n = model.n
    if n > 3:
        raise ConfigurationError("exact policy evaluation is limited to three names")
    beta = utility.beta

    def rec(I: NameSet, a: float):
        problem, pi = _problem_for_policy(model, spec, utility, strategy, I, a, T, quad_nodes, eval_floor)
        sig = pi @ problem.sigma
        var = np.einsum("ij,ij->i", sig, sig)
        if utility.is_log:
            ell = pi @ problem.mu - 0.5 * var
            prob = {I.bits: problem.P}
            coef = {I.bits: problem.P * problem.h * float(ell.sum())}
        else:
            r = pi @ problem.mu - 0.5 * utility.p * var
            prob = None
            coef = {I.bits: problem.P * math.exp(beta * problem.h * float(r.sum()))}
        if I.is_full() or problem.h <= 0:
            return prob, coef
        exposure = 1.0 - pi[problem.k_of_v] @ problem.gammas.T  # (M, nc)
        if (exposure <= 0).any():
            raise DomainError("strategy is not admissible on the quadrature grid")
        if utility.is_log:
            growth = problem.overlap @ ell
        else:
            G = np.exp(beta * (problem.overlap @ r))
        for col, i in enumerate(problem.survivors):
            Ii = I.union(i)
            for j, v in enumerate(problem.v):
                wq = problem.qw[col, j]
                if wq == 0.0:
                    continue
                cprob, ccoef = rec(Ii, float(v))
                if utility.is_log:
                    jump = growth[j] + math.log(exposure[j, col])
                    for K, pk in cprob.items():
                        prob[K] = prob.get(K, 0.0) + wq * pk
                        coef[K] = coef.get(K, 0.0) + wq * (pk * jump + ccoef[K])
                else:
                    factor = wq * G[j] * exposure[j, col] ** beta
                    for K, ck in ccoef.items():
                        coef[K] = coef.get(K, 0.0) + factor * ck
        return prob, coef

    prob, coef = rec(NameSet.empty(n), 0.0)
    if utility.is_log:
        return {K: prob[K] * math.log(x0) + coef[K] for K in coef}
    u0 = float(utility(x0))
    return {K: u0 * c for K, c in coef.items()}


def grid_tolerance(report: OptimizationReport) -> float:
    """Half-grid interpolation error estimate of ``V_empty``.

    Each scenario table is re-interpolated from every other node and compared
    at the omitted ones; the largest relative (log utility: absolute)
    coefficient discrepancy is carried to the value at ``x0``.
    """
    worst = 0.0
    util = report.utility
    for tab in report.table.tables.values():
        if tab.closed_form or tab.nodes.size < 5:
            continue
        keep = np.arange(0, tab.nodes.size, 2)
        if keep[-1] != tab.nodes.size - 1:
            keep = np.append(keep, tab.nodes.size - 1)
        drop = np.setdiff1d(np.arange(tab.nodes.size), keep)
        if util.is_log:
            approx = PchipInterpolator(tab.nodes[keep], tab.coef[keep])(tab.nodes[drop])
            worst = max(worst, float(np.max(np.abs(approx - tab.coef[drop]))))
        else:
            approx = PchipInterpolator(tab.nodes[keep], np.log(tab.coef[keep]))(tab.nodes[drop])
            worst = max(worst, float(np.max(np.abs(np.expm1(approx - np.log(tab.coef[drop]))))))
    return worst if util.is_log else worst * abs(report.value)


def random_constant_family(spec: ContagionAssetSpec, T: float, gen: np.random.Generator, margin: float = 0.1, scale: float = 2.0) -> StrategyFamily:
    """Constant proportions per scenario, drawn uniformly and shrunk into ``pi.gamma <= 1 - margin``."""
    table = {}
    for I in enumerate_scenarios(spec.n):
        pi = gen.uniform(-scale, scale, spec.N)
        worst = max((float(spec.jump(I.bits, i) @ pi) for i in I.complement()), default=0.0)
        if worst > 1.0 - margin:
            pi *= (1.0 - margin) / worst
        table[I.bits] = pi
    return StrategyFamily.constant(spec.n, T, table)


def verify_global(
    report: OptimizationReport,
    model: DefaultLawModel,
    spec: ContagionAssetSpec,
    N: int = 1_000_000,
    seed: int = 0,
    families: int = 20,
    family_paths: int = 200_000,
    threads: int = 1,
    strategy: StrategyFamily | None = None,
    exact_shares: bool = True,
) -> dict:
    """Checks of the computed value against simulation of the computed strategy.

    (a) ``E[U(X_T)]`` under the strategy agrees with ``V_empty(x0)`` within 3 standard errors plus the grid tolerance;
    (b) random admissible constant families never beat ``V_empty`` by more than 3 standard errors;
    (c) per-terminal-scenario shares agree with exact policy evaluation within 3 standard errors.

    ``strategy`` overrides the report's strategy, e.g. to test a perturbed one.
    """
    from .oracle import estimate_expected_utility

    check_reducible(model, spec)
    util, T, x0 = report.utility, report.T, report.x0
    strat = strategy if strategy is not None else report.strategy
    tol = grid_tolerance(report)
    est = estimate_expected_utility(spec, model, strat, x0, T, N, seed, util, threads)
    a_dev = abs(est.direct.mean - report.value)
    check_a = {
        "passed": bool(a_dev <= 3 * est.direct.stderr + tol),
        "value": report.value,
        "estimate": est.direct.to_dict(),
        "grid_tolerance": tol,
        "deviation": a_dev,
    }
    fam = []
    for r in range(families):
        gen = rngmod.stream(seed, rngmod.RANDOM_FAMILIES, r)
        f = random_constant_family(spec, T, gen)
        e = estimate_expected_utility(spec, model, f, x0, T, family_paths, seed + 1 + r, util, threads)
        fam.append({"estimate": e.direct.to_dict(), "passed": bool(e.direct.mean <= report.value + 3 * e.direct.stderr)})
    check_b = {"passed": all(f["passed"] for f in fam), "families": fam}
    out = {"a": check_a, "b": check_b, "regrouping_gap": est.regrouping_gap}
    if exact_shares and model.n <= 3:
        exact = policy_shares(model, spec, util, strat, x0, T)
        rows = []
        for K, share in sorted(est.shares.items()):
            ref = exact.get(K, 0.0)
            # deterministic-zero cells: tolerance guards against rounding only
            ok = abs(share.mean - ref) <= 3 * share.stderr + 1e-12 * max(1.0, abs(ref))
            rows.append({"scenario": NameSet(K, model.n).label(), "estimate": share.to_dict(), "exact": ref, "passed": bool(ok)})
        out["c"] = {"passed": all(r["passed"] for r in rows), "policy_value": math.fsum(exact.values()), "shares": rows}
    out["passed"] = all(out[k]["passed"] for k in ("a", "b", "c") if k in out)
    return out
