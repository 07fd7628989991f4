"""Survival copulas with closed-form mixed partial derivatives.

Every copula exposes ``partial(u, J)``, the mixed derivative of ``C`` with
respect to the coordinates in ``J`` evaluated row-wise on ``u`` of shape
``(batch, n)``. Box masses of the default law are signed sums of these
partials over box corners, so they are the only primitive the law needs.

Samplers return ``-log U`` rather than ``U``: default times are
``Lambda^{-1}(-log U)`` and the log form keeps full precision in the tails.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError
from .mvnormal import mvn_cdf


def _check_u(u: np.ndarray, n: int) -> np.ndarray:
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[1] != n:
        raise DomainError(f"expected {n} coordinates, got {u.shape[1]}")
    if np.isnan(u).any() or (u < 0).any() or (u > 1).any():
        raise DomainError("copula arguments must lie in [0, 1]")
    return u


def _normalize_J(J, n: int) -> tuple[int, ...]:
    J = tuple(sorted(int(j) for j in J))
    if len(set(J)) != len(J) or any(not 0 <= j < n for j in J):
        raise DomainError(f"invalid derivative index set {J} for n={n}")
    return J


@dataclass(frozen=True)
class IndependenceCopula:
    n: int

    @property
    def kind(self) -> str:
        return "independent"

    def params(self) -> dict:
        return {}

    def cdf(self, u) -> np.ndarray:
        return np.prod(_check_u(u, self.n), axis=1)

    def partial(self, u, J) -> np.ndarray:
        u = _check_u(u, self.n)
        J = _normalize_J(J, self.n)
        rest = [k for k in range(self.n) if k not in J]
        return np.prod(u[:, rest], axis=1)

    def sample_neglog_u(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.standard_exponential((count, self.n))


@dataclass(frozen=True)
class ClaytonCopula:
    """``C(u) = (sum u_i^-theta - n + 1)^(-1/theta)``, theta > 0."""

    n: int
    theta: float

    def __post_init__(self):
        if not np.isfinite(self.theta) or self.theta <= 0:
            raise ConfigurationError("Clayton theta must be strictly positive")

    @property
    def kind(self) -> str:
        return "clayton"

    def params(self) -> dict:
        return {"theta": float(self.theta)}

    def _log_s(self, u: np.ndarray) -> np.ndarray:
        """``log(1 + sum(u^-theta - 1))``.

        The expm1 form keeps precision as theta -> 0; once some ``u^-theta``
        is large the sum is rescaled by its largest term to avoid overflow.
        """
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            L = -self.theta * np.log(u)
            small = np.log1p(np.expm1(L).sum(axis=1))
            M = L.max(axis=1, keepdims=True)
            big = M[:, 0] + np.log(np.exp(L - M).sum(axis=1) + (1 - self.n) * np.exp(-M[:, 0]))
        return np.where(M[:, 0] > 1.0, np.where(np.isinf(M[:, 0]), np.inf, big), small)

    def cdf(self, u) -> np.ndarray:
        u = _check_u(u, self.n)
        out = np.exp(-self._log_s(u) / self.theta)
        return np.where((u == 0).any(axis=1), 0.0, out)

    def partial(self, u, J) -> np.ndarray:
        u = _check_u(u, self.n)
        J = _normalize_J(J, self.n)
        th, m = self.theta, len(J)
        const = sum(np.log1p(k * th) for k in range(m))
        with np.errstate(divide="ignore", invalid="ignore"):
            log_uj = np.log(u[:, list(J)]).sum(axis=1) if m else np.zeros(u.shape[0])
            log_val = const - (th + 1.0) * log_uj - (1.0 / th + m) * self._log_s(u)
        out = np.exp(log_val)
        # any zero coordinate kills the partial (C vanishes on that face)
        return np.where((u == 0).any(axis=1), 0.0, np.nan_to_num(out, nan=0.0))

    def sample_neglog_u(self, rng: np.random.Generator, count: int) -> np.ndarray:
        frailty = rng.gamma(1.0 / self.theta, 1.0, size=(count, 1))
        e = rng.standard_exponential((count, self.n))
        return np.log1p(e / frailty) / self.theta

    @staticmethod
    def kendall_tau(theta: float) -> float:
        return theta / (theta + 2.0)


@dataclass(frozen=True)
class GaussianCopula:
    corr: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        R = np.asarray(self.corr, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ConfigurationError("Gaussian correlation must be a square matrix")
        if not np.allclose(R, R.T, atol=1e-12, rtol=0) or not np.allclose(np.diag(R), 1.0, atol=1e-12, rtol=0):
            raise ConfigurationError("Gaussian correlation must be symmetric with unit diagonal")
        try:
            np.linalg.cholesky(R)
        except np.linalg.LinAlgError:
            raise ConfigurationError("Gaussian correlation must be positive definite") from None
        object.__setattr__(self, "corr", tuple(tuple(float(x) for x in row) for row in R))

    @property
    def n(self) -> int:
        return len(self.corr)

    @property
    def kind(self) -> str:
        return "gaussian"

    def params(self) -> dict:
        return {"corr": [list(r) for r in self.corr]}

    @cached_property
    def _R(self) -> np.ndarray:
        return np.asarray(self.corr, dtype=float)

    @cached_property
    def _chol(self) -> np.ndarray:
        return np.linalg.cholesky(self._R)

    def cdf(self, u) -> np.ndarray:
        return self.partial(u, ())

    def partial(self, u, J) -> np.ndarray:
        u = _check_u(u, self.n)
        J = list(_normalize_J(J, self.n))
        K = [k for k in range(self.n) if k not in J]
        out = np.zeros(u.shape[0])
        live = ~(u == 0).any(axis=1)
        if not live.any():
            return out
        x = special.ndtri(u[live])
        R = self._R
        if J:
            xJ = x[:, J]
            RJJ = R[np.ix_(J, J)]
            inv = np.linalg.inv(RJJ)
            quad = np.einsum("bi,ij,bj->b", xJ, inv - np.eye(len(J)), xJ)
            ratio = np.exp(-0.5 * quad) / np.sqrt(np.linalg.det(RJJ))
        else:
            ratio = np.ones(x.shape[0])
        if K:
            if J:
                B = R[np.ix_(K, J)] @ inv
                cond_mean = xJ @ B.T
                cond_cov = R[np.ix_(K, K)] - B @ R[np.ix_(J, K)]
            else:
                cond_mean = np.zeros((x.shape[0], len(K)))
                cond_cov = R[np.ix_(K, K)]
            sd = np.sqrt(np.diag(cond_cov))
            b = (x[:, K] - cond_mean) / sd
            cond_corr = cond_cov / np.outer(sd, sd)
            np.fill_diagonal(cond_corr, 1.0)
            tail = mvn_cdf(b, cond_corr)
        else:
            tail = np.ones(x.shape[0])
        out[live] = ratio * tail
        return out

    def sample_neglog_u(self, rng: np.random.Generator, count: int) -> np.ndarray:
        z = rng.standard_normal((count, self.n)) @ self._chol.T
        return -special.log_ndtr(z)


def copula_density(u, copula) -> np.ndarray:
    """Copula density ``c(u)``: the mixed partial over all coordinates."""
    u = _check_u(u, copula.n)
    if (u == 0).any():
        raise DomainError("copula density is evaluated on (0, 1]^n")
    return copula.partial(u, range(copula.n))


def make_copula(kind: str, n: int, **params):
    if kind == "independent":
        return IndependenceCopula(n)
    if kind == "clayton":
        return ClaytonCopula(n, float(params["theta"]))
    if kind == "gaussian":
        cop = GaussianCopula(params["corr"])
        if cop.n != n:
            raise ConfigurationError(f"correlation matrix is {cop.n}x{cop.n}, expected {n}x{n}")
        return cop
    raise ConfigurationError(f"unknown copula kind {kind!r}")


__all__ = [
    "IndependenceCopula",
    "ClaytonCopula",
    "GaussianCopula",
    "copula_density",
    "make_copula",
]
