"""Conditional law of the default vector.

The joint survival function is ``P(tau > s) = C(u_1(s_1), ..., u_n(s_n))``
with ``u_i = exp(-Lambda_i)`` and ``C`` a survival copula. Reference
information is a finite factor revealed at ``t0``: factor state ``j`` scales
every hazard by ``z_j`` and has prior probability ``p_j``. Before the reveal
the conditional density is the ``p``-mixture of the per-state densities,
afterwards it is the revealed state's density, so ``t -> alpha_t(s)`` is a
martingale by construction and every conditional expectation given
``F_t`` is a finite sum.

All integrals of the density over product boxes are computed exactly from
mixed partials of ``C`` by inclusion-exclusion over the box corners.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import rng as rngmod
from .copulas import ClaytonCopula, GaussianCopula, IndependenceCopula
from .errors import ConditioningError, ConfigurationError, DomainError, NumericalError
from .hazards import HazardCurve
from .scenarios import DefaultVector, NameSet

ZERO_MASS = 1e-300


@dataclass(frozen=True)
class FactorChain:
    """Finite factor: hazard multipliers ``z`` with prior ``p``, revealed at ``reveal_time``."""

    z: tuple[float, ...]
    p: tuple[float, ...]
    reveal_time: float

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if z.ndim != 1 or z.size == 0 or z.shape != p.shape:
            raise ConfigurationError("factor states and probabilities must be equal-length, non-empty lists")
        if (z <= 0).any() or not np.isfinite(z).all():
            raise ConfigurationError("factor weights must be finite and strictly positive")
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("factor probabilities must be non-negative and sum to 1")
        if abs(float(p @ z) - 1.0) > 1e-12:
            raise ConfigurationError("factor weights must have mean one under the factor probabilities")
        if not np.isfinite(self.reveal_time) or self.reveal_time < 0:
            raise ConfigurationError("factor reveal time must be finite and non-negative")
        object.__setattr__(self, "z", tuple(float(x) for x in z))
        object.__setattr__(self, "p", tuple(float(x) for x in p))
        object.__setattr__(self, "reveal_time", float(self.reveal_time))

    @property
    def m(self) -> int:
        return len(self.z)


@dataclass(frozen=True)
class FiltrationState:
    """Reference information at time ``t``: the factor state once it is revealed."""

    t: float
    factor: int | None = None

    def __post_init__(self):
        if not np.isfinite(self.t) or self.t < 0:
            raise DomainError("filtration time must be finite and non-negative")


@dataclass(frozen=True)
class DefaultLawModel:
    hazards: tuple[HazardCurve, ...]
    copula: IndependenceCopula | ClaytonCopula | GaussianCopula
    factor: FactorChain | None = None
    horizon: float = float("inf")
    # per-component hazards are derived, not compared
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "hazards", tuple(self.hazards))
        if not self.hazards:
            raise ConfigurationError("model needs at least one name")
        if self.copula.n != len(self.hazards):
            raise ConfigurationError(f"copula has {self.copula.n} names but {len(self.hazards)} hazard curves were given")
        if not self.horizon > 0:
            raise ConfigurationError("model horizon must be positive")

    # construction helpers
    @classmethod
    def independent(cls, hazards: Sequence[HazardCurve], **kw) -> "DefaultLawModel":
        return cls(tuple(hazards), IndependenceCopula(len(hazards)), **kw)

    @classmethod
    def clayton(cls, hazards: Sequence[HazardCurve], theta: float, **kw) -> "DefaultLawModel":
        return cls(tuple(hazards), ClaytonCopula(len(hazards), theta), **kw)

    @classmethod
    def gaussian(cls, hazards: Sequence[HazardCurve], corr, **kw) -> "DefaultLawModel":
        return cls(tuple(hazards), GaussianCopula(corr), **kw)

    def factor_scaled(self, chain: FactorChain) -> "DefaultLawModel":
        if self.factor is not None:
            raise ConfigurationError("model already carries a factor")
        return DefaultLawModel(self.hazards, self.copula, chain, self.horizon)

    @property
    def n(self) -> int:
        return len(self.hazards)

    @property
    def variant(self) -> str:
        return "factor_scaled" if self.factor is not None else self.copula.kind

    def describe(self) -> dict:
        out = {
            "copula": self.copula.kind,
            **self.copula.params(),
            "hazards": [{"breaks": list(h.breaks), "rates": list(h.rates)} for h in self.hazards],
        }
        if self.factor is not None:
            out["factor"] = {"z": list(self.factor.z), "p": list(self.factor.p), "reveal_time": self.factor.reveal_time}
        return out

    @cached_property
    def fingerprint(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def __hash__(self):
        return hash(self.fingerprint)

    # factor bookkeeping
    @property
    def n_components(self) -> int:
        return 1 if self.factor is None else self.factor.m

    def component_hazards(self, c: int) -> tuple[HazardCurve, ...]:
        if self.factor is None:
            return self.hazards
        key = ("hazards", c)
        if key not in self._cache:
            self._cache[key] = tuple(h.scaled(self.factor.z[c]) for h in self.hazards)
        return self._cache[key]

    def check_state(self, fs: FiltrationState) -> None:
        if self.factor is None:
            if fs.factor is not None:
                raise DomainError("this model has no factor to condition on")
            return
        revealed = fs.t >= self.factor.reveal_time
        if revealed and fs.factor is None:
            raise DomainError(f"factor is revealed at t={self.factor.reveal_time}; the state must name it")
        if not revealed and fs.factor is not None:
            raise DomainError(f"factor is not yet revealed at t={fs.t}")
        if fs.factor is not None and not 0 <= fs.factor < self.factor.m:
            raise DomainError(f"factor index {fs.factor} out of range")

    def weights(self, fs: FiltrationState) -> list[tuple[float, int]]:
        """Mixture weights of the per-state densities given the reference information."""
        self.check_state(fs)
        if self.factor is None:
            return [(1.0, 0)]
        if fs.factor is not None:
            return [(1.0, fs.factor)]
        return [(p, j) for j, p in enumerate(self.factor.p) if p > 0]

    def prior_weights(self) -> list[tuple[float, int]]:
        """Mixture weights before any reference information (the unconditional law)."""
        if self.factor is None:
            return [(1.0, 0)]
        return [(p, j) for j, p in enumerate(self.factor.p) if p > 0]

    def filtration(self, t: float, factor: int | None = None) -> FiltrationState:
        """State at ``t``; the factor is dropped automatically before its reveal."""
        if self.factor is None or t < self.factor.reveal_time:
            return FiltrationState(t, None)
        return FiltrationState(t, factor)

    def payoff_factor(self, T: float, c: int) -> int | None:
        """Factor index a maturity-``T`` payoff sees on component ``c``."""
        if self.factor is None or T < self.factor.reveal_time:
            return None
        return c

    # per-component primitives
    def _u(self, c: int, i: int, s) -> np.ndarray:
        return np.exp(-self.component_hazards(c)[i].cumulative(s))

    def _rate(self, c: int, i: int, s) -> np.ndarray:
        return self.component_hazards(c)[i].rate(s)

    def component_density(self, c: int, s: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=float))
        u = np.column_stack([self._u(c, i, s[:, i]) for i in range(self.n)])
        lam = np.column_stack([self._rate(c, i, s[:, i]) for i in range(self.n)])
        dens = self.copula.partial(u, range(self.n)) * np.prod(lam * u, axis=1)
        return np.where((s > 0).all(axis=1) & np.isfinite(s).all(axis=1), dens, 0.0)

    def component_mass(self, c: int, J: NameSet, s_J, lower, upper) -> np.ndarray:
        """``int alpha^c(s_J, x) dx`` over the box ``(lower, upper]`` in the ``J^c`` coordinates.

        ``s_J`` has shape ``(batch, |J|)``; ``lower``/``upper`` have one entry
        per name outside ``J`` (ascending index order).
        """
        n = self.n
        jidx = list(J.indices)
        kidx = list(J.complement().indices)
        s_J = np.asarray(s_J, dtype=float)
        if jidx:
            s_J = s_J.reshape(-1, len(jidx))
        else:
            s_J = np.empty((s_J.shape[0] if s_J.ndim == 2 else 1, 0))
        batch = s_J.shape[0]
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (len(kidx),))
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (len(kidx),))
        if (lower < 0).any() or (upper < lower).any():
            raise DomainError("box bounds need 0 <= lower <= upper")
        if (upper == lower).any():
            return np.zeros(batch)

        pre = np.ones(batch)
        u_J = np.empty((batch, len(jidx)))
        for col, j in enumerate(jidx):
            u_J[:, col] = self._u(c, j, s_J[:, col])
            pre *= self._rate(c, j, s_J[:, col]) * u_J[:, col]
        if not kidx:
            u = np.empty((batch, n))
            u[:, jidx] = u_J
            return pre * self.copula.partial(u, jidx)

        u_lo = np.array([float(self._u(c, k, lower[pos])) for pos, k in enumerate(kidx)])
        u_hi = np.array([float(self._u(c, k, upper[pos])) for pos, k in enumerate(kidx)])
        corners, signs = [], []
        for choice in itertools.product((0, 1), repeat=len(kidx)):
            uk = np.where(np.asarray(choice) == 1, u_hi, u_lo)
            if (uk == 0).any():
                continue
            corners.append(uk)
            signs.append(-1.0 if sum(choice) % 2 else 1.0)
        if not corners:
            return np.zeros(batch)
        u = np.empty((len(corners), batch, n))
        u[:, :, jidx] = u_J[None, :, :]
        u[:, :, kidx] = np.asarray(corners)[:, None, :]
        vals = self.copula.partial(u.reshape(-1, n), jidx).reshape(len(corners), batch)
        return pre * (np.asarray(signs) @ vals)


def density_at(model: DefaultLawModel, fs: FiltrationState, s) -> np.ndarray | float:
    """Conditional density ``alpha_t(s)``; accepts a DefaultVector or an ``(batch, n)`` array."""
    if isinstance(s, DefaultVector):
        arr = s.as_array()[None, :]
        scalar = True
    else:
        arr = np.atleast_2d(np.asarray(s, dtype=float))
        scalar = np.ndim(s) == 1
        if (arr <= 0).any():
            raise DomainError("default times must be strictly positive")
    out = sum(w * model.component_density(c, arr) for w, c in model.weights(fs))
    return float(out[0]) if scalar else out


def scenario_mass(model: DefaultLawModel, fs: FiltrationState, J: NameSet, s_J, lower, upper) -> np.ndarray:
    """Mixture of :meth:`DefaultLawModel.component_mass` under the information ``fs``."""
    return sum(w * model.component_mass(c, J, s_J, lower, upper) for w, c in model.weights(fs))


def box_integral(model: DefaultLawModel, fs: FiltrationState, lower, upper) -> float:
    """Probability mass of the product box ``(lower, upper]``; upper entries may be ``inf``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.shape != (model.n,) or upper.shape != (model.n,):
        raise DomainError(f"box bounds must have {model.n} entries")
    return float(scenario_mass(model, fs, NameSet.empty(model.n), np.empty((1, 0)), lower, upper)[0])


def prior_box_integral(model: DefaultLawModel, lower, upper) -> float:
    """Unconditional probability of the box ``(lower, upper]``."""
    empty = NameSet.empty(model.n)
    return float(
        sum(w * model.component_mass(c, empty, np.empty((1, 0)), lower, upper)[0] for w, c in model.prior_weights())
    )


def integrate_box(fn: Callable[..., float], lower, upper, rtol: float = 1e-8, atol: float = 1e-14, limit: int = 200) -> float:
    """Adaptive Gauss-Kronrod integral of ``fn(x_1, ..., x_d)`` over a box.

    Raises :class:`NumericalError` carrying the estimate and error bound when
    the tolerance is not reached.
    """
    ranges = list(zip(np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)))
    if not ranges:
        return float(fn())
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, err = integrate.nquad(fn, ranges, opts={"epsrel": rtol, "epsabs": atol, "limit": limit})
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"adaptive quadrature did not converge: {exc}") from None
    if err > max(rtol * abs(value), atol) * 10:
        raise NumericalError("adaptive quadrature error bound above tolerance", estimate=value, error_bound=err)
    return float(value)


@dataclass(frozen=True)
class ConditionalKernel:
    """Density of the surviving names' default times given scenario ``I`` at ``t``."""

    model: DefaultLawModel
    fs: FiltrationState
    I: NameSet
    s_I: tuple[float, ...]
    mass: float

    @property
    def free(self) -> tuple[int, ...]:
        return self.I.complement().indices

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.free):
            raise DomainError(f"kernel takes {len(self.free)} coordinates")
        s = np.empty((x.shape[0], self.model.n))
        s[:, list(self.I.indices)] = self.s_I
        s[:, list(self.free)] = x
        inside = (x > self.fs.t).all(axis=1)
        vals = np.zeros(x.shape[0])
        if inside.any():
            vals[inside] = density_at(self.model, self.fs, s[inside]) / self.mass
        return vals

    def box(self, lower, upper) -> float:
        """Kernel mass of a box inside ``(t, inf)^{I^c}``."""
        lower = np.maximum(np.asarray(lower, dtype=float), self.fs.t)
        upper = np.asarray(upper, dtype=float)
        m = scenario_mass(self.model, self.fs, self.I, np.asarray(self.s_I)[None, :], lower, upper)
        return float(m[0]) / self.mass


def conditional_density_given(model: DefaultLawModel, fs: FiltrationState, I: NameSet, s_I) -> ConditionalKernel:
    s_I = tuple(float(x) for x in np.atleast_1d(np.asarray(s_I, dtype=float)))
    if len(s_I) != len(I):
        raise DomainError(f"scenario {I} needs {len(I)} default times")
    if any(not 0 < x <= fs.t for x in s_I):
        raise DomainError("observed default times must lie in (0, t]")
    k = model.n - len(I)
    mass = float(scenario_mass(model, fs, I, np.asarray(s_I)[None, :], np.full(k, fs.t), np.full(k, np.inf))[0])
    if not mass > ZERO_MASS:
        raise ConditioningError(f"scenario {I} has zero conditional mass at t={fs.t}")
    return ConditionalKernel(model, fs, I, s_I, mass)


@dataclass(frozen=True)
class DefaultSample:
    """Sampled default times ``(count, n)`` and factor states (``-1`` without a factor)."""

    times: np.ndarray = field(repr=False)
    factor: np.ndarray = field(repr=False)
    seed: int = 0

    def __len__(self) -> int:
        return self.times.shape[0]

    def vectors(self) -> list[tuple[DefaultVector, int | None]]:
        return [
            (DefaultVector(tuple(row)), None if f < 0 else int(f))
            for row, f in zip(self.times, self.factor)
        ]


def _has_tie(times: np.ndarray) -> np.ndarray:
    srt = np.sort(times, axis=1)
    return (np.diff(srt, axis=1) == 0).any(axis=1)


def _draw(model: DefaultLawModel, gen: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
    if model.factor is None:
        factor = np.full(count, -1, dtype=np.int64)
        scale = np.ones(count)
    else:
        cum = np.cumsum(model.factor.p)
        factor = np.minimum(np.searchsorted(cum, gen.random(count), side="right"), model.factor.m - 1)
        scale = np.asarray(model.factor.z)[factor]
    e = model.copula.sample_neglog_u(gen, count)
    times = np.column_stack([h.inverse(e[:, i] / scale) for i, h in enumerate(model.hazards)])
    return times, factor


def sample_defaults(model: DefaultLawModel, seed: int, count: int, threads: int = 1) -> DefaultSample:
    """I.i.d. draws of (default times, factor state); identical for any thread count."""
    if count < 1:
        raise DomainError("sample count must be at least 1")

    def block(b: int, lo: int, hi: int):
        times, factor = _draw(model, rngmod.stream(seed, rngmod.DEFAULTS, b), hi - lo)
        attempt = 0
        while True:
            tied = _has_tie(times)
            if not tied.any():
                break
            gen = rngmod.stream(seed, rngmod.TIE_REDRAW, b, attempt)
            times[tied], factor[tied] = _draw(model, gen, int(tied.sum()))
            attempt += 1
        return times, factor

    parts = rngmod.map_blocks(block, count, threads)
    return DefaultSample(
        rngmod.concat(p[0] for p in parts), rngmod.concat(p[1] for p in parts), int(seed)
    )
