"""Piecewise-constant hazard curves.

A curve is given by finite breakpoints ``b_1 < ... < b_m`` and ``m + 1``
rates; rate ``k`` applies on ``[b_k, b_{k+1})`` with ``b_0 = 0`` and
``b_{m+1} = inf``. The last rate must be strictly positive so every name
defaults eventually.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class HazardCurve:
    breaks: tuple[float, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        breaks = tuple(float(b) for b in self.breaks)
        rates = tuple(float(r) for r in self.rates)
        if len(rates) != len(breaks) + 1:
            raise ConfigurationError("hazard curve needs exactly one more rate than breakpoints")
        if any(not np.isfinite(b) or b <= 0 for b in breaks) or any(
            b1 >= b2 for b1, b2 in zip(breaks, breaks[1:])
        ):
            raise ConfigurationError("hazard breakpoints must be finite, positive and increasing")
        if any(not np.isfinite(r) or r < 0 for r in rates):
            raise ConfigurationError("hazard rates must be finite and non-negative")
        if rates[-1] <= 0:
            raise ConfigurationError("final hazard rate must be strictly positive")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def constant(cls, rate: float) -> "HazardCurve":
        return cls((), (rate,))

    @classmethod
    def from_segments(cls, segments: Sequence[Sequence[float]]) -> "HazardCurve":
        """Build from ``[(t_end, rate), ...]``; the last ``t_end`` may be ``inf``/``None``."""
        if not segments:
            raise ConfigurationError("hazard curve needs at least one segment")
        # the final rate always extends to infinity, whatever its declared end
        ends = [float("inf") if e is None else float(e) for e, _ in segments]
        return cls(tuple(ends[:-1]), tuple(float(r) for _, r in segments))

    def scaled(self, z: float) -> "HazardCurve":
        return HazardCurve(self.breaks, tuple(z * r for r in self.rates))

    @property
    def _knots(self) -> np.ndarray:
        return np.concatenate(([0.0], self.breaks))

    @property
    def _cum_at_knots(self) -> np.ndarray:
        knots = self._knots
        return np.concatenate(([0.0], np.cumsum(np.diff(knots) * np.asarray(self.rates[:-1]))))

    def _segment(self, t: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.breaks), t, side="right")

    def rate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.asarray(self.rates)[self._segment(t)]

    def cumulative(self, t) -> np.ndarray:
        """Integrated hazard ``Lambda(t)``; ``inf`` at ``t = inf``."""
        t = np.asarray(t, dtype=float)
        k = self._segment(t)
        with np.errstate(invalid="ignore"):
            out = self._cum_at_knots[k] + np.asarray(self.rates)[k] * (t - self._knots[k])
        return np.where(np.isposinf(t), np.inf, out)

    def survival(self, t) -> np.ndarray:
        return np.exp(-self.cumulative(t))

    def inverse(self, y) -> np.ndarray:
        """Smallest ``t`` with ``Lambda(t) = y`` for ``y >= 0``."""
        y = np.asarray(y, dtype=float)
        cum = self._cum_at_knots
        rates = np.asarray(self.rates)
        # zero-rate segments are flat; side="right" skips them
        k = np.searchsorted(cum, y, side="right") - 1
        k = np.clip(k, 0, len(rates) - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self._knots[k] + (y - cum[k]) / rates[k]
        t = np.where(rates[k] > 0, t, self._knots[k])
        return np.where(np.isposinf(y), np.inf, t)

    def breakpoints_in(self, lo: float, hi: float) -> list[float]:
        return [b for b in self.breaks if lo < b < hi]
