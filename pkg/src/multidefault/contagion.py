"""Asset and wealth dynamics with contagion jumps at default times.

Between defaults, asset ``j`` follows ``dS/S = drift^I dt + (Sigma^I dW)_j``
with coefficients chosen by the current scenario ``I``. When name ``k``
defaults from scenario ``J`` every asset jumps by the factor
``1 - gamma^{J,k}``. A proportion strategy ``pi`` turns this into the wealth
dynamics ``dX/X = pi . (drift dt + Sigma dW)`` and the wealth jump
``X -> X (1 - pi . gamma)``.

Coefficients are constant in time within a scenario and affine in the
observed default times: ``c^I(s_I) = c0 + c_latest * max(s_I) + sum_i c_i s_i``.
``drift`` here is the asset drift; it is unrelated to the scenario margin
measures of the default law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import rng as rngmod
from .errors import AdmissibilityError, ConfigurationError, DomainError, StructuralError
from .law import DefaultLawModel, sample_defaults
from .oracle import sample_block
from .scenarios import NameSet

ADMISSIBILITY_MARGIN = 1e-9


@dataclass(frozen=True)
class Coefficient:
    """Affine map ``s_I -> base + latest * s_vee + sum_i by_name[i] * s_i`` (array valued)."""

    base: np.ndarray
    latest: np.ndarray | None = None
    by_name: Mapping[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        base = np.asarray(self.base, dtype=float)
        object.__setattr__(self, "base", base)
        if self.latest is not None:
            lat = np.asarray(self.latest, dtype=float)
            if lat.shape != base.shape:
                raise ConfigurationError("latest-default slope must match the coefficient shape")
            object.__setattr__(self, "latest", lat if np.any(lat) else None)
        names = {}
        for i, v in dict(self.by_name).items():
            v = np.asarray(v, dtype=float)
            if v.shape != base.shape:
                raise ConfigurationError("per-name slope must match the coefficient shape")
            if np.any(v):
                names[int(i)] = v
        object.__setattr__(self, "by_name", names)
        if not np.isfinite(base).all():
            raise ConfigurationError("coefficients must be finite")

    @property
    def reduced(self) -> bool:
        """True when the value depends on the default times only through the latest one."""
        return not self.by_name

    def at(self, a, s=None) -> np.ndarray:
        """Evaluate for latest default time(s) ``a``; ``s`` is the full ``(batch, n)`` time array."""
        a = np.asarray(a, dtype=float)
        out = np.broadcast_to(self.base, a.shape + self.base.shape).copy()
        if self.latest is not None:
            out += a.reshape(a.shape + (1,) * self.base.ndim) * self.latest
        if self.by_name:
            if s is None:
                raise DomainError("per-name coefficient slopes need the default times")
            s = np.asarray(s, dtype=float).reshape(a.shape + (-1,))
            for i, v in self.by_name.items():
                out += s[..., i].reshape(a.shape + (1,) * self.base.ndim) * v
        return out


@dataclass(frozen=True)
class ContagionAssetSpec:
    """Per-scenario drift/volatility tables and per-(scenario, name) jump fractions."""

    n: int
    N: int
    drift: Mapping[int, Coefficient] = field(repr=False)
    vol: Mapping[int, Coefficient] = field(repr=False)
    gamma: Mapping[tuple[int, int], np.ndarray] = field(repr=False)

    def __post_init__(self):
        full = (1 << self.n) - 1
        drift = {int(k): v for k, v in self.drift.items()}
        vol = {int(k): v for k, v in self.vol.items()}
        for name, table, shape in (("drift", drift, (self.N,)), ("volatility", vol, (self.N, self.N))):
            missing = [NameSet(b, self.n).label() for b in range(full + 1) if b not in table]
            if missing:
                raise StructuralError(f"{name} table is missing scenarios {', '.join(missing)}")
            for b, c in table.items():
                if c.base.shape != shape:
                    raise ConfigurationError(f"{name} for scenario {NameSet(b, self.n)} must have shape {shape}")
                if any(not b >> i & 1 for i in c.by_name):
                    raise ConfigurationError(
                        f"{name} for scenario {NameSet(b, self.n)} depends on a name that has not defaulted"
                    )
        gamma = {}
        for (J, k), g in self.gamma.items():
            g = np.asarray(g, dtype=float)
            if g.shape != (self.N,):
                raise ConfigurationError(f"jump vector for ({NameSet(int(J), self.n)}, {k + 1}) must have {self.N} entries")
            if (g < 0).any() or (g >= 1).any() or not np.isfinite(g).all():
                raise AdmissibilityError(
                    f"jump fractions for scenario {NameSet(int(J), self.n)}, name {k + 1} must lie in [0, 1); "
                    "a full loss would make wealth non-positive for any long position",
                    scenario=NameSet(int(J), self.n),
                    name=int(k),
                    value=float(g.max()),
                )
            gamma[(int(J), int(k))] = g
        for J in range(full):
            for k in range(self.n):
                if not J >> k & 1 and (J, k) not in gamma:
                    raise StructuralError(f"jump table is missing ({NameSet(J, self.n)}, name {k + 1})")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "vol", vol)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def uniform(cls, n: int, mu, sigma, gamma=None) -> "ContagionAssetSpec":
        """Scenario-independent coefficients; ``gamma`` is one jump vector for all names or one row per name."""
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        N = mu.size
        g = np.zeros(N) if gamma is None else np.asarray(gamma, dtype=float)
        rows = g if g.ndim == 2 else np.tile(g, (n, 1))
        if rows.shape != (n, N):
            raise ConfigurationError(f"jump table must have shape ({n}, {N}) or ({N},)")
        full = 1 << n
        return cls(
            n,
            N,
            {b: Coefficient(mu) for b in range(full)},
            {b: Coefficient(sigma) for b in range(full)},
            {(J, k): rows[k].copy() for J in range(full - 1) for k in range(n) if not J >> k & 1},
        )

    def jump(self, J: int, k: int) -> np.ndarray:
        return self.gamma[(int(J), int(k))]

    @property
    def reduced(self) -> bool:
        return all(c.reduced for c in self.drift.values()) and all(c.reduced for c in self.vol.values())

    def coefficients(self, I: int, a, s=None) -> tuple[np.ndarray, np.ndarray]:
        return self.drift[int(I)].at(a, s), self.vol[int(I)].at(a, s)


def apply_jump(values, gamma) -> np.ndarray:
    """Asset values after a default: ``values * (1 - gamma)``."""
    values = np.asarray(values, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if (gamma >= 1).any() or (gamma < 0).any():
        raise AdmissibilityError("jump fractions must lie in [0, 1)", value=float(gamma.max()))
    if (values <= 0).any():
        raise DomainError("asset values must be positive")
    return values * (1.0 - gamma)


@dataclass(frozen=True)
class StrategyFamily:
    """Per-scenario proportions, piecewise constant on ``m`` equal intervals of ``(s_vee, T]``.

    For scenario ``I`` the table holds nodes ``a_1 < ... < a_G`` of the latest
    default time and values of shape ``(G, m, N)``; between nodes the
    interval values are interpolated linearly in ``s_vee``.
    """

    n: int
    N: int
    T: float
    nodes: Mapping[int, np.ndarray] = field(repr=False)
    values: Mapping[int, np.ndarray] = field(repr=False)

    def __post_init__(self):
        nodes = {int(k): np.atleast_1d(np.asarray(v, dtype=float)) for k, v in self.nodes.items()}
        values = {int(k): np.asarray(v, dtype=float) for k, v in self.values.items()}
        missing = [NameSet(b, self.n).label() for b in range(1 << self.n) if b not in nodes or b not in values]
        if missing:
            raise StructuralError(f"strategy is missing scenarios {', '.join(missing)}")
        for b in range(1 << self.n):
            v = values[b]
            if v.ndim != 3 or v.shape[0] != nodes[b].size or v.shape[2] != self.N:
                raise ConfigurationError(f"strategy table for {NameSet(b, self.n)} has shape {v.shape}")
            if nodes[b].size > 1 and (np.diff(nodes[b]) <= 0).any():
                raise ConfigurationError("strategy nodes must be increasing")
            if not np.isfinite(v).all():
                raise ConfigurationError("strategy values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, n: int, T: float, table: Mapping[int, np.ndarray]) -> "StrategyFamily":
        vals = {int(b): np.asarray(v, dtype=float).reshape(1, 1, -1) for b, v in table.items()}
        N = next(iter(vals.values())).shape[2]
        return cls(n, N, T, {b: np.zeros(1) for b in vals}, vals)

    @classmethod
    def zero(cls, n: int, N: int, T: float) -> "StrategyFamily":
        return cls.constant(n, T, {b: np.zeros(N) for b in range(1 << n)})

    def intervals(self, I: int) -> int:
        return self.values[int(I)].shape[1]

    def table(self, I: int, a) -> np.ndarray:
        """Interval values for latest default time(s) ``a``: shape ``a.shape + (m, N)``."""
        a = np.asarray(a, dtype=float)
        nodes, vals = self.nodes[int(I)], self.values[int(I)]
        if nodes.size == 1:
            return np.broadcast_to(vals[0], a.shape + vals.shape[1:])
        j = np.clip(np.searchsorted(nodes, a, side="right") - 1, 0, nodes.size - 2)
        w = np.clip((a - nodes[j]) / (nodes[j + 1] - nodes[j]), 0.0, 1.0)
        w = w.reshape(a.shape + (1, 1))
        return (1 - w) * vals[j] + w * vals[j + 1]

    def interval_index(self, I: int, a, t, predictable: bool = True) -> np.ndarray:
        """Interval of ``(a, T]`` containing ``t``; predictable uses the left limit at boundaries."""
        m = self.intervals(I)
        a = np.asarray(a, dtype=float)
        span = np.maximum(self.T - a, 1e-300)
        x = m * (np.asarray(t, dtype=float) - a) / span
        k = np.ceil(x) - 1 if predictable else np.floor(x)
        return np.clip(k, 0, m - 1).astype(np.int64)

    def at(self, I: int, a: float, t: float) -> np.ndarray:
        """Proportions applied at ``t`` (predictable) in scenario ``I`` with latest default ``a``."""
        return self.table(I, a)[int(self.interval_index(I, a, t))]

    def to_dict(self) -> dict:
        return {
            NameSet(b, self.n).label(): {"nodes": self.nodes[b].tolist(), "values": self.values[b].tolist()}
            for b in range(1 << self.n)
        }


@dataclass(frozen=True)
class AdmissibilityReport:
    ok: bool
    scenario: NameSet | None = None
    name: int | None = None
    time: float | None = None
    value: float | None = None

    def describe(self) -> str:
        if self.ok:
            return "admissible"
        return (
            f"pi . gamma = {self.value:.12g} >= 1 in scenario {self.scenario} for name {self.name + 1} "
            f"at t = {self.time:.6g}"
        )


def check_admissible(strategy: StrategyFamily, spec: ContagionAssetSpec, T: float, margin: float = ADMISSIBILITY_MARGIN) -> AdmissibilityReport:
    """Scan ``pi^I . gamma^{I,i} < 1`` over every node and interval (exact for linear interpolation)."""
    if strategy.n != spec.n or strategy.N != spec.N:
        raise DomainError("strategy and asset spec dimensions differ")
    full = (1 << spec.n) - 1
    for I in range(full):
        nodes, vals = strategy.nodes[I], strategy.values[I]
        m = vals.shape[1]
        for i in range(spec.n):
            if I >> i & 1:
                continue
            exposure = vals @ spec.jump(I, i)  # (G, m)
            bad = np.argwhere(exposure >= 1.0 - margin)
            if bad.size:
                g, k = bad[0]
                a = float(nodes[g])
                t = a + (T - a) * k / m
                return AdmissibilityReport(False, NameSet(I, spec.n), i, t, float(exposure[g, k]))
    return AdmissibilityReport(True)


def require_admissible(strategy, spec, T) -> None:
    rep = check_admissible(strategy, spec, T)
    if not rep.ok:
        raise AdmissibilityError(rep.describe(), rep.scenario, rep.name, rep.time, rep.value)


@dataclass(frozen=True)
class SimulatedPath:
    """One path on its own time grid: regular steps plus every default time and strategy switch."""

    times: np.ndarray
    masks: np.ndarray
    assets: np.ndarray
    wealth: np.ndarray | None
    default_times: np.ndarray
    factor: int
    jumps: tuple[tuple[float, int, int, float], ...]  # (time, name, pre-default mask, wealth factor)


def _brownian(seed: int, path: int, grid: np.ndarray, extra: np.ndarray, N: int) -> np.ndarray:
    """Brownian values at ``grid`` (regular) and ``extra`` points inserted by bridging.

    The regular-grid values depend only on ``(seed, path)``, never on the
    inserted points.
    """
    gen = rngmod.stream(seed, rngmod.BROWNIAN, path)
    steps = np.diff(grid)
    W = np.vstack([np.zeros(N), np.cumsum(gen.standard_normal((steps.size, N)) * np.sqrt(steps)[:, None], axis=0)])
    if extra.size == 0:
        return W
    bridge = rngmod.stream(seed, rngmod.BRIDGE, path)
    times = list(grid)
    values = list(W)
    for x in np.sort(extra):
        j = np.searchsorted(times, x)
        if j < len(times) and times[j] == x:
            continue
        t0, t1 = times[j - 1], times[j]
        w0, w1 = values[j - 1], values[j]
        frac = (x - t0) / (t1 - t0)
        sd = np.sqrt((x - t0) * (t1 - x) / (t1 - t0))
        times.insert(j, x)
        values.insert(j, w0 + frac * (w1 - w0) + sd * bridge.standard_normal(N))
    return np.asarray(values)


def _path_grid(dt: float, T: float) -> np.ndarray:
    steps = max(1, int(np.ceil(T / dt - 1e-12)))
    grid = np.arange(steps + 1) * dt
    grid[-1] = T
    return grid


def simulate_paths(
    spec: ContagionAssetSpec,
    law: DefaultLawModel,
    seed: int,
    dt: float,
    T: float,
    count: int,
    s0=None,
    strategy: StrategyFamily | None = None,
    x0: float = 1.0,
) -> list[SimulatedPath]:
    """Joint asset (and optionally wealth) paths with exact log-normal segments."""
    if dt <= 0 or T <= 0:
        raise DomainError("time step and horizon must be positive")
    if law.n != spec.n:
        raise DomainError("law and asset spec name counts differ")
    if strategy is not None:
        if x0 <= 0:
            raise DomainError("initial wealth must be positive")
        require_admissible(strategy, spec, T)
    s0 = np.ones(spec.N) if s0 is None else np.asarray(s0, dtype=float)
    if s0.shape != (spec.N,) or (s0 <= 0).any():
        raise DomainError("initial asset values must be positive")
    sample = sample_defaults(law, seed, count)
    grid = _path_grid(dt, T)
    out = []
    for p in range(count):
        tau = sample.times[p]
        out.append(_one_path(spec, strategy, seed, p, grid, T, tau, int(sample.factor[p]), s0, x0))
    return out


def _one_path(spec, strategy, seed, p, grid, T, tau, factor, s0, x0) -> SimulatedPath:
    n, N = spec.n, spec.N
    order = [int(i) for i in np.argsort(tau) if tau[i] <= T]
    events = [float(tau[i]) for i in order]
    # strategy switch times, one set per scenario phase
    switches = []
    if strategy is not None:
        starts = [0.0] + events
        mask = 0
        for ph, a in enumerate(starts):
            end = events[ph] if ph < len(events) else T
            m = strategy.intervals(mask)
            switches += [a + (T - a) * k / m for k in range(1, m) if a + (T - a) * k / m < end]
            if ph < len(order):
                mask |= 1 << order[ph]
    extra = np.array(sorted(set(events + switches) - set(grid.tolist())))
    W_all = _brownian(seed, p, grid, extra, N)
    times = np.union1d(grid, extra)

    logS = np.empty((times.size, N))
    logX = np.empty(times.size) if strategy is not None else None
    masks = np.empty(times.size, dtype=np.int64)
    jumps = []
    mask = 0
    a = 0.0
    seg_t, seg_W = 0.0, W_all[0]
    seg_S, seg_X = np.log(s0), np.log(x0)
    drift, vol = spec.coefficients(mask, a, tau)
    pi = strategy.at(mask, a, 0.0) if strategy is not None else None
    next_event = 0
    for idx, t in enumerate(times):
        if idx > 0 and strategy is not None:
            # a new strategy interval starts a new segment
            new_pi = strategy.at(mask, a, t)
            if not np.array_equal(new_pi, pi):
                prev_t = times[idx - 1]
                seg_S, seg_X = _advance(seg_S, seg_X, drift, vol, pi, prev_t - seg_t, W_all[idx - 1] - seg_W)
                seg_t, seg_W = prev_t, W_all[idx - 1]
                pi = new_pi
        S_t, X_t = _advance(seg_S, seg_X, drift, vol, pi, t - seg_t, W_all[idx] - seg_W)
        while next_event < len(order) and events[next_event] == t:
            k = order[next_event]
            g = spec.jump(mask, k)
            S_t = S_t + np.log1p(-g)
            factor_x = 1.0
            if strategy is not None:
                pi_pre = strategy.at(mask, a, t)
                factor_x = 1.0 - float(pi_pre @ g)
                X_t = X_t + np.log(factor_x)
            jumps.append((t, k, mask, factor_x))
            new_mask = mask | 1 << k
            new_drift, new_vol = spec.coefficients(new_mask, t, tau)
            new_pi = strategy.at(new_mask, t, t) if strategy is not None else None
            if not (
                np.array_equal(new_drift, drift)
                and np.array_equal(new_vol, vol)
                and not g.any()
                and (strategy is None or (np.array_equal(new_pi, pi) and factor_x == 1.0))
            ):
                seg_t, seg_W, seg_S, seg_X = t, W_all[idx], S_t, X_t
            mask, a = new_mask, t
            drift, vol, pi = new_drift, new_vol, new_pi
            next_event += 1
        logS[idx] = S_t
        if logX is not None:
            logX[idx] = X_t
        masks[idx] = mask
    return SimulatedPath(
        times,
        masks,
        np.exp(logS),
        None if logX is None else np.exp(logX),
        np.asarray(tau, dtype=float),
        factor,
        tuple(jumps),
    )


def _advance(log_s, log_x, drift, vol, pi, dt, dW):
    var = np.einsum("ij,ij->i", vol, vol)
    S = log_s + (drift - 0.5 * var) * dt + vol @ dW
    if pi is None:
        return S, log_x
    sig = pi @ vol
    X = log_x + (pi @ drift - 0.5 * sig @ sig) * dt + sig @ dW
    return S, X


def simulate_assets(spec, law, seed, dt, T, count=1, s0=None) -> list[SimulatedPath]:
    return simulate_paths(spec, law, seed, dt, T, count, s0)


def simulate_wealth(spec, strategy, x0, law, seed, dt, T, count=1, s0=None) -> list[SimulatedPath]:
    return simulate_paths(spec, law, seed, dt, T, count, s0, strategy, x0)


@dataclass(frozen=True)
class TerminalSample:
    """Terminal log-wealth, default times and terminal scenario per path."""

    log_wealth: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    masks: np.ndarray = field(repr=False)


def _terminal_block(spec, law, strategy, log_x0, T, seed, b, size):
    times, _ = sample_block(law, seed, b, size)
    n = spec.n
    gen = rngmod.stream(seed, rngmod.TERMINAL_WEALTH, b)
    m_max = max(strategy.intervals(I) for I in range(1 << n))
    xi = gen.standard_normal((size, n + 1, m_max))
    logx = np.full(size, log_x0)
    hit = times <= T
    masks = (hit * (1 << np.arange(n))).sum(axis=1)
    order = np.argsort(np.where(hit, times, np.inf), axis=1, kind="stable")
    ndef = hit.sum(axis=1)
    # paths sharing the default order follow the same scenario sequence
    seq_key = np.zeros(size, dtype=np.int64)
    for pos in range(n):
        seq_key = seq_key * (n + 1) + np.where(pos < ndef, order[:, pos] + 1, 0)
    for key in np.unique(seq_key):
        rows = np.flatnonzero(seq_key == key)
        nd = int(ndef[rows[0]])
        seq = order[rows[0], :nd]
        tr = times[rows]
        mask = 0
        a = np.zeros(rows.size)
        for ph in range(nd + 1):
            end = tr[:, seq[ph]] if ph < nd else np.full(rows.size, T)
            m = strategy.intervals(mask)
            pis = strategy.table(mask, a)  # (P, m, N)
            drift, vol = spec.coefficients(mask, a, tr)
            h = (T - a) / m
            for k in range(m):
                lo = a + k * h
                L = np.clip(np.minimum(end, lo + h) - lo, 0.0, None)
                pi = pis[:, k, :]
                sig = np.einsum("pj,pjl->pl", pi, vol)
                var = np.einsum("pl,pl->p", sig, sig)
                mean = np.einsum("pj,pj->p", pi, drift) - 0.5 * var
                logx[rows] += mean * L + np.sqrt(var * L) * xi[rows, ph, k]
            if ph < nd:
                i = int(seq[ph])
                kk = strategy.interval_index(mask, a, end)
                pi_pre = pis[np.arange(rows.size), kk, :]
                logx[rows] += np.log1p(-(pi_pre @ spec.jump(mask, i)))
                mask |= 1 << i
                a = end
    return logx, times, masks


def terminal_wealth(
    spec: ContagionAssetSpec,
    law: DefaultLawModel,
    strategy: StrategyFamily,
    x0: float,
    T: float,
    N: int,
    seed: int,
    threads: int = 1,
) -> TerminalSample:
    """Exact terminal wealth sampler: one Gaussian draw per (scenario phase, strategy interval).

    Default times come from the same block streams as :func:`sample_defaults`.
    """
    if x0 <= 0:
        raise DomainError("initial wealth must be positive")
    require_admissible(strategy, spec, T)
    parts = rngmod.map_blocks(
        lambda b, lo, hi: _terminal_block(spec, law, strategy, np.log(x0), T, seed, b, hi - lo), N, threads
    )
    return TerminalSample(
        rngmod.concat(p[0] for p in parts), rngmod.concat(p[1] for p in parts), rngmod.concat(p[2] for p in parts)
    )
