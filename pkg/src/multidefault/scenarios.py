"""Default scenarios and scenario-indexed (decomposed) quantities.

Names are indexed ``0..n-1`` in code. Rendered scenario labels use the
mathematical convention ``{1,...,n}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, DomainError, StructuralError

MAX_NAMES = 16


def _check_n(n: int) -> None:
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= MAX_NAMES:
        raise ConfigurationError(f"name count must be in 1..{MAX_NAMES}, got {n!r}")


@dataclass(frozen=True, order=True)
class NameSet:
    """Subset of the name universe encoded as a bit mask (bit ``i`` <-> name ``i``)."""

    bits: int
    n: int

    def __post_init__(self):
        _check_n(self.n)
        if self.bits < 0 or self.bits >> self.n:
            raise DomainError(f"mask {self.bits:#x} uses bits outside {self.n} names")

    @classmethod
    def of(cls, n: int, indices: Iterable[int] = ()) -> "NameSet":
        bits = 0
        for i in indices:
            if not 0 <= int(i) < n:
                raise DomainError(f"name index {i} out of range for n={n}")
            bits |= 1 << int(i)
        return cls(bits, n)

    @classmethod
    def empty(cls, n: int) -> "NameSet":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "NameSet":
        return cls((1 << n) - 1, n)

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.bits >> i & 1)

    def __len__(self) -> int:
        return bin(self.bits).count("1")

    def __contains__(self, i: int) -> bool:
        return 0 <= i < self.n and bool(self.bits >> i & 1)

    def __iter__(self):
        return iter(self.indices)

    def complement(self) -> "NameSet":
        return NameSet(((1 << self.n) - 1) ^ self.bits, self.n)

    def union(self, other: "NameSet | int") -> "NameSet":
        other_bits = other.bits if isinstance(other, NameSet) else 1 << int(other)
        return NameSet(self.bits | other_bits, self.n)

    def __or__(self, other):
        return self.union(other)

    def minus(self, other: "NameSet") -> "NameSet":
        return NameSet(self.bits & ~other.bits, self.n)

    def issuperset(self, other: "NameSet") -> bool:
        return self.bits & other.bits == other.bits

    def is_full(self) -> bool:
        return self.bits == (1 << self.n) - 1

    def label(self) -> str:
        return "{" + ",".join(str(i + 1) for i in self.indices) + "}"

    def __str__(self) -> str:
        return self.label()


def enumerate_scenarios(n: int) -> list[NameSet]:
    """All ``2**n`` subsets, ordered by cardinality then mask value."""
    _check_n(n)
    masks = sorted(range(1 << n), key=lambda b: (bin(b).count("1"), b))
    return [NameSet(b, n) for b in masks]


def supersets(J: NameSet) -> list[NameSet]:
    """Scenarios containing ``J``, in enumeration order."""
    free = J.complement().indices
    out = []
    for sub in range(1 << len(free)):
        bits = J.bits
        for pos, i in enumerate(free):
            if sub >> pos & 1:
                bits |= 1 << i
        out.append(NameSet(bits, J.n))
    out.sort(key=lambda s: (len(s), s.bits))
    return out


@dataclass(frozen=True)
class DefaultVector:
    """Default times of all names; ``inf`` marks "not defaulted before the horizon"."""

    times: tuple[float, ...]

    def __post_init__(self):
        arr = np.asarray(self.times, dtype=float)
        if arr.ndim != 1 or arr.size == 0:
            raise DomainError("default vector must be a non-empty 1-d sequence")
        _check_n(arr.size)
        if np.isnan(arr).any() or (arr <= 0).any():
            raise DomainError("default times must be strictly positive")
        finite = np.sort(arr[np.isfinite(arr)])
        if finite.size > 1 and (np.diff(finite) == 0).any():
            raise DomainError("simultaneous defaults are not supported (tied default times)")
        object.__setattr__(self, "times", tuple(float(x) for x in arr))

    @property
    def n(self) -> int:
        return len(self.times)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.times, dtype=float)


@dataclass(frozen=True)
class ScenarioState:
    """Observed state at time ``t``: defaulted set ``I`` and its default times.

    ``s_I`` is ordered by name index, not chronologically.
    """

    I: NameSet
    s_I: tuple[float, ...]
    t: float

    def __post_init__(self):
        s = tuple(float(x) for x in self.s_I)
        object.__setattr__(self, "s_I", s)
        if len(s) != len(self.I):
            raise DomainError(f"scenario {self.I} needs {len(self.I)} default times, got {len(s)}")
        if self.t < 0:
            raise DomainError("observation time must be non-negative")
        if any(not (0 < x <= self.t) for x in s):
            raise DomainError("observed default times must lie in (0, t]")
        if len(set(s)) != len(s):
            raise DomainError("observed default times must be pairwise distinct")

    @classmethod
    def initial(cls, n: int, t: float = 0.0) -> "ScenarioState":
        return cls(NameSet.empty(n), (), t)

    @property
    def latest(self) -> float:
        """Time of the most recent default (0 when nothing has defaulted)."""
        return max(self.s_I, default=0.0)


def classify_path(s: DefaultVector, t: float, predictable: bool = False) -> ScenarioState:
    """Scenario of a default path at time ``t``.

    With ``predictable=True`` the strict comparison ``s_i < t`` is used, which
    is the pre-default convention for strategies evaluated at a jump time.
    """
    if t < 0:
        raise DomainError("observation time must be non-negative")
    arr = s.as_array()
    hit = arr < t if predictable else arr <= t
    I = NameSet.of(s.n, np.flatnonzero(hit))
    return ScenarioState(I, tuple(arr[hit]), t)


def classify_masks(times: np.ndarray, t: float) -> np.ndarray:
    """Vectorised scenario masks for an ``(paths, n)`` array of default times."""
    times = np.asarray(times, dtype=float)
    weights = 1 << np.arange(times.shape[1], dtype=np.int64)
    return ((times <= t) * weights).sum(axis=1)


@dataclass(frozen=True)
class DecomposedProcess:
    """Family ``{f^I}`` of per-scenario functions ``f^I(t, s_I)``."""

    n: int
    table: Mapping[int, Callable[[float, tuple], object]] = field(repr=False)

    def __post_init__(self):
        _check_n(self.n)
        table = {(k.bits if isinstance(k, NameSet) else int(k)): v for k, v in self.table.items()}
        missing = [NameSet(b, self.n).label() for b in range(1 << self.n) if b not in table]
        if missing:
            raise StructuralError(f"decomposed process is missing scenarios {', '.join(missing)}")
        object.__setattr__(self, "table", table)

    @classmethod
    def constant(cls, n: int, value) -> "DecomposedProcess":
        return cls(n, {b: (lambda t, s_I, v=value: v) for b in range(1 << n)})

    @classmethod
    def from_function(cls, n: int, fn: Callable[[NameSet, float, tuple], object]) -> "DecomposedProcess":
        return cls(n, {b: (lambda t, s_I, I=NameSet(b, n): fn(I, t, s_I)) for b in range(1 << n)})

    def entry(self, I: NameSet):
        try:
            return self.table[I.bits]
        except KeyError:
            raise StructuralError(f"no entry for scenario {I}") from None


def decomposed_eval(p: DecomposedProcess, t: float, s: DefaultVector):
    """Evaluate ``p`` on the path ``s`` at time ``t`` through its active scenario."""
    if s.n != p.n:
        raise DomainError(f"path has {s.n} names, process has {p.n}")
    state = classify_path(s, t)
    return p.entry(state.I)(t, state.s_I)
