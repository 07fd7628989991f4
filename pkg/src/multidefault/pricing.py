"""Conditional pricing of default-contingent payoffs.

Given the observed scenario ``J`` with default times ``s_J`` at time ``t``,
the price of a payoff ``Y_T = sum_I 1{A_T^I} Y^I(tau_I)`` is

    sum_{I >= J} int_{(t,T]^{I\\J} x (T,inf)^{I^c}} E[Y^I(s_I) alpha_T(s) | F_t] ds
    -------------------------------------------------------------------------
                     int_{(t,inf)^{J^c}} alpha_t(s_J, x) dx

Scenarios not containing ``J`` contribute nothing and are skipped. The
factor expectation is an exact finite sum. Constant payoff entries give
closed-form box masses; callable entries are integrated over the newly
defaulted coordinates with tensor Gauss-Legendre rules split at hazard
breakpoints, the surviving coordinates always being integrated in closed
form.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConditioningError, ConfigurationError, DomainError, StructuralError
from .law import ZERO_MASS, DefaultLawModel, FiltrationState
from .scenarios import NameSet, ScenarioState, supersets


def _rows(arr, d: int) -> np.ndarray:
    """View ``arr`` as ``(batch, d)``; a 1-d input is a single row."""
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 2:
        return arr
    return arr.reshape(-1, d) if d else np.empty((1, 0))


PayoffEntry = float | Callable[[np.ndarray, "int | None"], np.ndarray]

DEFAULT_NODES = 32
_MAX_ROWS = 1 << 18


@dataclass(frozen=True)
class DecomposedPayoff:
    """Per-scenario payoffs ``Y_T^I(s_I, factor)`` at maturity ``T``, bounded by ``cap``.

    An entry is either a constant or a callable taking ``s_I`` as a
    ``(batch, |I|)`` array (columns in name order) and the factor index.
    """

    n: int
    T: float
    table: Mapping[int, PayoffEntry] = field(repr=False)
    cap: float = 1.0

    def __post_init__(self):
        table = {(k.bits if isinstance(k, NameSet) else int(k)): v for k, v in self.table.items()}
        missing = [NameSet(b, self.n).label() for b in range(1 << self.n) if b not in table]
        if missing:
            raise StructuralError(f"payoff is missing scenarios {', '.join(missing)}")
        if not np.isfinite(self.cap) or self.cap <= 0:
            raise ConfigurationError("payoff cap must be finite and positive")
        if not np.isfinite(self.T) or self.T < 0:
            raise ConfigurationError("maturity must be finite and non-negative")
        for b, v in table.items():
            if not callable(v):
                v = float(v)
                if not 0 <= v <= self.cap:
                    raise ConfigurationError(
                        f"payoff entry {NameSet(b, self.n)} = {v} outside [0, cap={self.cap}]"
                    )
                table[b] = v
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, n: int, T: float, value: float) -> "DecomposedPayoff":
        return cls(n, T, {b: value for b in range(1 << n)}, cap=max(float(value), 1e-300))

    @classmethod
    def by_count(cls, n: int, T: float, fn: Callable[[int], float]) -> "DecomposedPayoff":
        """Payoff depending only on the number of defaults by ``T``."""
        table = {b: float(fn(bin(b).count("1"))) for b in range(1 << n)}
        return cls(n, T, table, cap=max(max(table.values()), 1e-300))

    @classmethod
    def indicator(cls, n: int, T: float, scenarios) -> "DecomposedPayoff":
        hit = {s.bits if isinstance(s, NameSet) else int(s) for s in scenarios}
        return cls(n, T, {b: float(b in hit) for b in range(1 << n)})

    def entry(self, I: NameSet) -> PayoffEntry:
        return self.table[I.bits]

    def is_constant(self, I: NameSet) -> bool:
        return not callable(self.table[I.bits])

    def evaluate_entry(self, I: NameSet, s_I: np.ndarray, factor: int | None) -> np.ndarray:
        s_I = _rows(s_I, len(I))
        v = self.table[I.bits]
        if not callable(v):
            return np.full(s_I.shape[0], v)
        out = np.broadcast_to(np.asarray(v(s_I, factor), dtype=float), (s_I.shape[0],))
        if (out < 0).any() or (out > self.cap * (1 + 1e-12)).any() or np.isnan(out).any():
            raise DomainError(f"payoff entry {I} returned values outside [0, cap={self.cap}]")
        return out

    def evaluate_paths(self, times: np.ndarray, factor: np.ndarray) -> np.ndarray:
        """Payoff along sampled paths (``factor < 0`` means no factor)."""
        times = np.atleast_2d(np.asarray(times, dtype=float))
        masks = ((times <= self.T) * (1 << np.arange(self.n))).sum(axis=1)
        out = np.empty(times.shape[0])
        for b in np.unique(masks):
            rows = masks == b
            I = NameSet(int(b), self.n)
            v = self.table[int(b)]
            if not callable(v):
                out[rows] = v
                continue
            fac = factor[rows]
            for f in np.unique(fac):
                sel = np.flatnonzero(rows)[fac == f]
                out[sel] = self.evaluate_entry(I, times[np.ix_(sel, list(I.indices))], None if f < 0 else int(f))
        return out


@dataclass(frozen=True)
class PriceReport:
    value: float
    scenario: ScenarioState
    error_bound: float
    breakdown: dict[str, float]
    description: str = ""

    def to_dict(self) -> dict:
        return {
            "description": self.description,
            "value": self.value,
            "error_bound": self.error_bound,
            "scenario": {
                "defaulted": [i + 1 for i in self.scenario.I.indices],
                "default_times": list(self.scenario.s_I),
                "t": self.scenario.t,
            },
            "breakdown": dict(self.breakdown),
        }


def _gl_panels(lo: float, hi: float, cuts, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on ``(lo, hi]`` split at ``cuts``."""
    if hi <= lo:
        return np.empty(0), np.empty(0)
    edges = np.unique(np.concatenate(([lo], [c for c in cuts if lo < c < hi], [hi])))
    x, w = np.polynomial.legendre.leggauss(nodes)
    a, b = edges[:-1, None], edges[1:, None]
    pts = (a + (b - a) * (x + 1) / 2).ravel()
    wts = ((b - a) / 2 * w).ravel()
    return pts, wts


def _mass_error(model: DefaultLawModel, free: int) -> float:
    """Absolute error of one closed-form mass evaluation with ``free`` open coordinates."""
    if model.copula.kind == "gaussian" and free >= 4:
        return 2.0 ** free * 1e-8
    return 0.0


def _callable_term(model, c, payoff, J, I, s_J, t, T, nodes) -> np.ndarray:
    """``int Y^I alpha^c`` over ``(t,T]^{I\\J}`` with the ``I^c`` tail in closed form."""
    new = I.minus(J).indices
    rest_k = model.n - len(I)
    factor = model.payoff_factor(T, c)
    axes = [_gl_panels(t, T, model.hazards[i].breaks, nodes) for i in new]
    batch = s_J.shape[0]
    if any(p.size == 0 for p, _ in axes):
        return np.zeros(batch)
    if new:
        grid = np.stack(np.meshgrid(*[p for p, _ in axes], indexing="ij"), axis=-1).reshape(-1, len(new))
        wgt = np.prod(np.stack(np.meshgrid(*[w for _, w in axes], indexing="ij"), axis=-1).reshape(-1, len(new)), axis=1)
    else:
        grid, wgt = np.empty((1, 0)), np.ones(1)
    order = list(I.indices)
    col_J = [order.index(j) for j in J.indices]
    col_new = [order.index(i) for i in new]
    out = np.zeros(batch)
    chunk = max(1, _MAX_ROWS // grid.shape[0])
    for lo in range(0, batch, chunk):
        sj = s_J[lo : lo + chunk]
        b = sj.shape[0]
        s_I = np.empty((b, grid.shape[0], len(I)))
        s_I[:, :, col_J] = sj[:, None, :]
        s_I[:, :, col_new] = grid[None, :, :]
        flat = s_I.reshape(b * grid.shape[0], len(I))
        inner = model.component_mass(c, I, flat, np.full(rest_k, T), np.full(rest_k, np.inf))
        vals = payoff.evaluate_entry(I, flat, factor) * inner
        out[lo : lo + chunk] = vals.reshape(b, -1) @ wgt
    return out


def scenario_terms(
    model: DefaultLawModel,
    payoff: DecomposedPayoff,
    J: NameSet,
    s_J: np.ndarray,
    t: float,
    fs_factor: int | None = None,
    nodes: int = DEFAULT_NODES,
) -> tuple[dict[int, np.ndarray], dict[int, np.ndarray], np.ndarray]:
    """Numerator per scenario ``I >= J``, its error, and the denominator, batched over ``s_J``.

    ``s_J`` has shape ``(batch, |J|)``. Returned arrays are unnormalised
    (divide by the denominator for prices).
    """
    if payoff.n != model.n:
        raise DomainError(f"payoff has {payoff.n} names, model has {model.n}")
    T = payoff.T
    fs = FiltrationState(t, fs_factor)
    s_J = _rows(s_J, len(J))
    batch = s_J.shape[0]
    kc = model.n - len(J)
    weights = model.weights(fs)
    den = sum(w * model.component_mass(c, J, s_J, np.full(kc, t), np.full(kc, np.inf)) for w, c in weights)
    nums, errs = {}, {}
    free_J = J.complement().indices
    for I in supersets(J):
        num = np.zeros(batch)
        err = np.zeros(batch)
        const = payoff.is_constant(I)
        y = payoff.entry(I) if const else None
        if const and y == 0.0:
            nums[I.bits], errs[I.bits] = num, err
            continue
        for w, c in weights:
            if const:
                lower = np.array([t if k in I else T for k in free_J])
                upper = np.array([T if k in I else np.inf for k in free_J])
                num += w * y * model.component_mass(c, J, s_J, lower, upper)
                err += w * y * _mass_error(model, kc)
            else:
                fine = _callable_term(model, c, payoff, J, I, s_J, t, T, nodes)
                coarse = _callable_term(model, c, payoff, J, I, s_J, t, T, max(nodes // 2, 2))
                num += w * fine
                err += w * (np.abs(fine - coarse) + _mass_error(model, model.n - len(I)) * payoff.cap)
        nums[I.bits], errs[I.bits] = num, err
    return nums, errs, den


_DEN_CACHE: dict = {}


def _check_inputs(model: DefaultLawModel, state: ScenarioState, fs: FiltrationState, T: float) -> None:
    if state.I.n != model.n:
        raise DomainError(f"scenario has {state.I.n} names, model has {model.n}")
    if state.t != fs.t:
        raise DomainError("scenario time and filtration time differ")
    if state.t > T:
        raise DomainError("observation time is after maturity")
    if T > model.horizon:
        raise DomainError(f"maturity {T} exceeds the model horizon {model.horizon}")
    model.check_state(fs)


def _denominator(model, J, s_J, t, fs_factor) -> float:
    key = (model.fingerprint, J.bits, tuple(round(x, 12) for x in s_J), float(t), fs_factor)
    val = _DEN_CACHE.get(key)
    if val is None:
        kc = model.n - len(J)
        val = float(
            sum(
                w * model.component_mass(c, J, np.asarray(s_J)[None, :], np.full(kc, t), np.full(kc, np.inf))[0]
                for w, c in model.weights(FiltrationState(t, fs_factor))
            )
        )
        _DEN_CACHE[key] = val  # idempotent, so last writer wins safely
    return val


def price_general(
    model: DefaultLawModel,
    payoff: DecomposedPayoff,
    state: ScenarioState,
    fs: FiltrationState,
    nodes: int = DEFAULT_NODES,
    description: str = "",
) -> PriceReport:
    """``E[Y_T | G_t]`` on the observed scenario ``state``."""
    _check_inputs(model, state, fs, payoff.T)
    J = state.I
    den = _denominator(model, J, state.s_I, state.t, fs.factor)
    if not den > ZERO_MASS:
        raise ConditioningError(f"scenario {J} has zero conditional mass at t={state.t}")
    s_J = np.asarray(state.s_I, dtype=float)[None, :]
    nums, errs, _ = scenario_terms(model, payoff, J, s_J, state.t, fs.factor, nodes)
    breakdown = {NameSet(b, model.n).label(): float(v[0] / den) for b, v in nums.items()}
    value = float(sum(v[0] for v in nums.values()) / den)
    error = float(sum(e[0] for e in errs.values()) / den) + 1e-14 * payoff.cap
    return PriceReport(value, state, error, breakdown, description)


def _zero_report(state: ScenarioState, description: str) -> PriceReport:
    return PriceReport(0.0, state, 0.0, {}, description)


def kth_survival_payoff(n: int, k: int, T: float) -> DecomposedPayoff:
    return DecomposedPayoff.by_count(n, T, lambda m: 1.0 if m < k else 0.0)


def kth_to_default_survival(
    model: DefaultLawModel, k: int, state: ScenarioState, fs: FiltrationState, T: float, nodes: int = DEFAULT_NODES
) -> PriceReport:
    """``P(tau_(k) > T | G_t)`` on the observed scenario."""
    if not 1 <= k <= model.n:
        raise ConfigurationError(f"k must be in 1..{model.n}")
    desc = f"kth_survival(k={k}, T={T})"
    if len(state.I) >= k:
        _check_inputs(model, state, fs, T)
        return _zero_report(state, desc)
    return price_general(model, kth_survival_payoff(model.n, k, T), state, fs, nodes, description=desc)


def first_to_default_survival(
    model: DefaultLawModel, state: ScenarioState, fs: FiltrationState, T: float, nodes: int = DEFAULT_NODES
) -> PriceReport:
    """Survival of the first default past ``T``; identical to ``k = 1``."""
    return kth_to_default_survival(model, 1, state, fs, T, nodes)


def ladder_weights(n: int, a: float, R: float) -> np.ndarray:
    """Weights ``w_k = min(k - a/R, 1)_+`` for ``k = 1..n`` with ``(mR - a)_+ = R sum_{k<=m} w_k``."""
    if R == 0:
        return np.zeros(n)
    k = np.arange(1, n + 1)
    return np.clip(k - a / R, 0.0, 1.0)


def _check_loss_args(a: float, R: float) -> None:
    if not 0 <= R <= 1:
        raise ConfigurationError("recovery-loss fraction R must lie in [0, 1]")
    if not a >= 0:
        raise ConfigurationError("attachment must be non-negative")


def _ladder_price(model, weights, R, state, fs, T, desc, nodes) -> PriceReport:
    value, error, breakdown = 0.0, 0.0, {}
    for k, w in enumerate(weights, start=1):
        if w == 0:
            continue
        rep = kth_to_default_survival(model, k, state, fs, T, nodes)
        term = R * w * (1.0 - rep.value)
        breakdown[f"k={k}"] = term
        value += term
        error += R * w * rep.error_bound
    return PriceReport(max(value, 0.0), state, error, breakdown, desc)


def loss_call(
    model: DefaultLawModel, a: float, R: float, state: ScenarioState, fs: FiltrationState, T: float, nodes: int = DEFAULT_NODES
) -> PriceReport:
    """``E[(l_T - a)_+ | G_t]`` with ``l_T = R * #defaults by T``."""
    _check_loss_args(a, R)
    _check_inputs(model, state, fs, T)
    desc = f"loss_call(a={a}, R={R}, T={T})"
    return _ladder_price(model, ladder_weights(model.n, a, R), R, state, fs, T, desc, nodes)


def tranche_price(
    model: DefaultLawModel,
    a: float,
    b: float,
    R: float,
    state: ScenarioState,
    fs: FiltrationState,
    T: float,
    nodes: int = DEFAULT_NODES,
) -> PriceReport:
    """Expected tranche loss ``E[(l_T - a)_+ - (l_T - b)_+ | G_t]``."""
    _check_loss_args(a, R)
    if a > b:
        raise ConfigurationError(f"tranche needs a <= b, got a={a}, b={b}")
    _check_inputs(model, state, fs, T)
    desc = f"tranche(a={a}, b={b}, R={R}, T={T})"
    if a == b:
        return _zero_report(state, desc)
    # combining the two ladders keeps every term non-negative
    w = ladder_weights(model.n, a, R) - ladder_weights(model.n, b, R)
    return _ladder_price(model, w, R, state, fs, T, desc, nodes)


def loss_payoff(n: int, T: float, R: float, a: float, b: float = np.inf) -> DecomposedPayoff:
    """Direct per-scenario tranche payoff ``min((R|I| - a)_+, b - a)``."""
    return DecomposedPayoff.by_count(n, T, lambda m: min(max(R * m - a, 0.0), b - a))



def _bin_ratio(model, payoff, J, lo, hi, t, fs_factor, nodes) -> float:
    axes = [_gl_panels(a, b, (), nodes) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*[p for p, _ in axes], indexing="ij"), axis=-1).reshape(-1, len(J))
    wgt = np.prod(np.stack(np.meshgrid(*[w for _, w in axes], indexing="ij"), axis=-1).reshape(-1, len(J)), axis=1)
    nums, _, den = scenario_terms(model, payoff, J, grid, t, fs_factor)
    total = sum(nums.values())
    return float(total @ wgt) / float(den @ wgt)


def bin_average(
    model: DefaultLawModel,
    payoff: DecomposedPayoff,
    J: NameSet,
    lo,
    hi,
    t: float,
    fs_factor: int | None = None,
    nodes: int = 8,
) -> tuple[float, float]:
    """Price averaged over ``s_J`` in the bin ``(lo, hi]`` with the scenario's own weight.

    This is ``E[Y_T | A_t^J, s_J in bin]`` and is what a binned Monte Carlo
    group mean estimates. Returns ``(value, error estimate)``.
    """
    if not len(J):
        rep = price_general(model, payoff, ScenarioState.initial(model.n, t), FiltrationState(t, fs_factor))
        return rep.value, rep.error_bound
    fine = _bin_ratio(model, payoff, J, lo, hi, t, fs_factor, nodes)
    coarse = _bin_ratio(model, payoff, J, lo, hi, t, fs_factor, max(nodes // 2, 1))
    return fine, abs(fine - coarse)
