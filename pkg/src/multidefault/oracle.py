"""Monte Carlo estimators used as a brute-force check on the pricers and the optimizer.

Paths are produced in fixed blocks with block-indexed streams, per-block
moments are merged in block order, so every estimate is reproducible bit for
bit from (inputs, seed, count) and independent of the thread count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .errors import DomainError
from .law import DefaultLawModel, _draw, _has_tie
from .pricing import DecomposedPayoff
from .scenarios import NameSet


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    count: int
    seed: int
    tag: str = ""

    def deviation(self, value: float) -> float:
        return abs(self.mean - value)

    def agrees(self, value: float, k: float = 3.0, tol: float = 0.0) -> bool:
        return self.deviation(value) <= k * self.stderr + tol

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "count": self.count, "seed": self.seed, "tag": self.tag}


@dataclass
class Moments:
    """Streaming count/mean/M2 for a vector of statistics (Chan et al. pairwise merge)."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, width: int) -> "Moments":
        return cls(0, np.zeros(width), np.zeros(width))

    @classmethod
    def of(cls, values: np.ndarray) -> "Moments":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] == 0:
            return cls.empty(values.shape[1])
        mean = values.mean(axis=0)
        return cls(values.shape[0], mean, ((values - mean) ** 2).sum(axis=0))

    def merge(self, other: "Moments") -> "Moments":
        if other.count == 0:
            return Moments(self.count, self.mean.copy(), self.m2.copy())
        if self.count == 0:
            return Moments(other.count, other.mean.copy(), other.m2.copy())
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return Moments(n, mean, m2)

    @property
    def stderr(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.inf if self.count == 0 else 0.0)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)

    def estimates(self, seed: int, tags: Sequence[str]) -> tuple[Estimate, ...]:
        se = self.stderr
        return tuple(Estimate(float(m), float(s), self.count, seed, t) for m, s, t in zip(self.mean, se, tags))


def merge_all(parts: Sequence[Moments]) -> Moments:
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


@dataclass(frozen=True)
class BinEstimate:
    """Group of paths sharing a scenario, a default-time bin and (once revealed) a factor state."""

    J: NameSet
    factor: int | None
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    estimates: tuple[Estimate, ...] = field(repr=False)

    @property
    def count(self) -> int:
        return self.estimates[0].count

    @property
    def estimate(self) -> Estimate:
        return self.estimates[0]


def sample_block(model: DefaultLawModel, seed: int, b: int, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Block ``b`` of the default sampler; matches :func:`law.sample_defaults` exactly."""
    times, factor = _draw(model, rngmod.stream(seed, rngmod.DEFAULTS, b), size)
    attempt = 0
    while True:
        tied = _has_tie(times)
        if not tied.any():
            return times, factor
        gen = rngmod.stream(seed, rngmod.TIE_REDRAW, b, attempt)
        times[tied], factor[tied] = _draw(model, gen, int(tied.sum()))
        attempt += 1


def _group_keys(model, times, factor, t, bins) -> np.ndarray:
    n = model.n
    hit = times <= t
    mask = (hit * (1 << np.arange(n))).sum(axis=1).astype(np.int64)
    if t > 0:
        idx = np.clip(np.ceil(times / t * bins).astype(np.int64) - 1, 0, bins - 1)
    else:
        idx = np.zeros(times.shape, dtype=np.int64)
    idx = np.where(hit, idx, 0)
    key = mask
    radix = 1 << n
    for i in range(n):
        key = key + radix * idx[:, i]
        radix *= bins
    revealed = model.factor is not None and t >= model.factor.reveal_time
    if revealed:
        key = key + radix * factor
    return key


def _decode(model, key: int, t: float, bins: int):
    n = model.n
    mask = key % (1 << n)
    rest = key >> n
    idx = []
    for _ in range(n):
        idx.append(rest % bins)
        rest //= bins
    revealed = model.factor is not None and t >= model.factor.reveal_time
    J = NameSet(int(mask), n)
    width = t / bins
    lo = tuple(idx[i] * width for i in J.indices)
    hi = tuple((idx[i] + 1) * width for i in J.indices)
    return J, (int(rest) if revealed else None), lo, hi


def estimate_prices(
    model: DefaultLawModel,
    payoffs: Sequence[DecomposedPayoff],
    t: float,
    N: int,
    seed: int,
    bins: int = 8,
    threads: int = 1,
) -> list[BinEstimate]:
    """Group means of several payoffs over paths binned by their scenario at ``t``.

    Each group estimates ``E[Y_T | A_t^J, s_J in bin, factor]``. Groups are
    returned in ascending key order (scenario mask first).
    """
    if N < 1000:
        raise DomainError("at least 1000 paths are required")
    if not payoffs:
        raise DomainError("no payoffs given")
    for p in payoffs:
        if p.n != model.n:
            raise DomainError("payoff and model name counts differ")
        if t > p.T:
            raise DomainError("observation time is after maturity")
    width = len(payoffs)

    def block(b: int, lo: int, hi: int):
        times, factor = sample_block(model, seed, b, hi - lo)
        vals = np.column_stack(
            [p.evaluate_paths(times, factor if model.factor is not None and p.T >= model.factor.reveal_time else np.full_like(factor, -1)) for p in payoffs]
        )
        keys = _group_keys(model, times, factor, t, bins)
        uniq, inv = np.unique(keys, return_inverse=True)
        return {int(k): Moments.of(vals[inv == g]) for g, k in enumerate(uniq)}

    parts = rngmod.map_blocks(block, N, threads)
    merged: dict[int, Moments] = {}
    for part in parts:
        for k, mom in part.items():
            merged[k] = merged[k].merge(mom) if k in merged else mom
    tags = [f"payoff[{j}]" for j in range(width)]
    out = []
    for k in sorted(merged):
        J, fac, lo, hi = _decode(model, k, t, bins)
        out.append(BinEstimate(J, fac, lo, hi, merged[k].estimates(seed, tags)))
    return out


def estimate_price(
    model: DefaultLawModel, payoff: DecomposedPayoff, t: float, N: int, seed: int, bins: int = 8, threads: int = 1
) -> list[BinEstimate]:
    return estimate_prices(model, [payoff], t, N, seed, bins, threads)


def scenario_frequencies(model: DefaultLawModel, t: float, N: int, seed: int, threads: int = 1) -> dict[int, Estimate]:
    """Empirical probability of each scenario at ``t`` with binomial standard errors."""

    def block(b: int, lo: int, hi: int):
        times, _ = sample_block(model, seed, b, hi - lo)
        mask = ((times <= t) * (1 << np.arange(model.n))).sum(axis=1)
        return np.bincount(mask, minlength=1 << model.n)

    counts = np.sum(rngmod.map_blocks(block, N, threads), axis=0)
    out = {}
    for b, c in enumerate(counts):
        p = c / N
        out[b] = Estimate(float(p), math.sqrt(p * (1 - p) / N), N, seed, NameSet(b, model.n).label())
    return out


@dataclass(frozen=True)
class UtilityEstimate:
    """Expected terminal utility, directly and regrouped by terminal scenario.

    ``regrouping_gap`` is the difference between the correctly rounded sum of
    all path utilities and the correctly rounded sum of the same values
    concatenated scenario by scenario; it is exactly zero by construction of
    the grouping and non-zero only if a path were lost or double counted.
    """

    direct: Estimate
    decomposed: Estimate
    shares: dict[int, Estimate]
    regrouping_gap: float

    def to_dict(self) -> dict:
        return {
            "direct": self.direct.to_dict(),
            "decomposed": self.decomposed.to_dict(),
            "shares": {str(k): v.to_dict() for k, v in sorted(self.shares.items())},
            "regrouping_gap": self.regrouping_gap,
        }


def estimate_expected_utility(spec, law, strategy, x0: float, T: float, N: int, seed: int, utility, threads: int = 1) -> UtilityEstimate:
    """Monte Carlo ``E[U(X_T)]`` under a strategy family, with per-terminal-scenario shares.

    ``utility`` needs an ``of_log`` method mapping log-wealth to utility.
    """
    from .contagion import terminal_wealth

    if N < 2:
        raise DomainError("at least two paths are required")
    sample = terminal_wealth(spec, law, strategy, x0, T, N, seed, threads)
    values = np.asarray(utility.of_log(sample.log_wealth), dtype=float)
    if not np.isfinite(values).all():
        raise DomainError("non-finite terminal utility")
    direct = Moments.of(values).estimates(seed, ["direct"])[0]
    shares = {}
    groups = []
    for mask in range(1 << law.n):
        sel = sample.masks == mask
        contrib = np.where(sel, values, 0.0)
        shares[mask] = Moments.of(contrib).estimates(seed, [NameSet(mask, law.n).label()])[0]
        groups.append(values[sel])
    regrouped = np.concatenate(groups)
    gap = math.fsum(values.tolist()) - math.fsum(regrouped.tolist())
    total = math.fsum(regrouped.tolist()) / N
    decomposed = Estimate(total, direct.stderr, N, seed, "decomposed")
    return UtilityEstimate(direct, decomposed, shares, gap)
