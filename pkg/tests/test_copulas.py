import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm, spearmanr

from multidefault.copulas import ClaytonCopula, GaussianCopula, IndependenceCopula, copula_density, make_copula
from multidefault.errors import ConfigurationError


def _mixed_fd(cdf, u, h=1e-4):
    """Central finite difference of the mixed second partial of a 2-d CDF."""
    u1, u2 = u
    f = lambda a, b: float(cdf(np.array([[a, b]]))[0])
    return (f(u1 + h, u2 + h) - f(u1 + h, u2 - h) - f(u1 - h, u2 + h) + f(u1 - h, u2 - h)) / (4 * h * h)


def test_clayton_density_matches_finite_differences():
    c = ClaytonCopula(2, 2.0)
    fd = _mixed_fd(c.cdf, (0.5, 0.5))
    assert copula_density(np.array([[0.5, 0.5]]), c)[0] == pytest.approx(fd, rel=1e-6)


def test_gaussian_density_matches_closed_form():
    rho = 0.5
    c = GaussianCopula(np.array([[1.0, rho], [rho, 1.0]]))
    u = np.array([[0.3, 0.8], [0.9, 0.1]])
    x = norm.ppf(u)
    ref = multivariate_normal(cov=[[1, rho], [rho, 1]]).pdf(x) / norm.pdf(x).prod(axis=1)
    assert np.allclose(copula_density(u, c), ref, rtol=1e-10)


def test_gaussian_partial_matches_conditional_cdf():
    rho = 0.4
    c = GaussianCopula(np.array([[1.0, rho], [rho, 1.0]]))
    u = np.array([[0.3, 0.7]])
    x = norm.ppf(u[0])
    ref = norm.cdf((x[1] - rho * x[0]) / np.sqrt(1 - rho**2))
    assert c.partial(u, (0,))[0] == pytest.approx(ref, rel=1e-12)


def test_clayton_independence_limit():
    c = ClaytonCopula(2, 1e-8)
    g = np.array([[a, b] for a in (0.1, 0.5, 0.9) for b in (0.2, 0.6)])
    assert np.max(np.abs(copula_density(g, c) - 1.0)) < 1e-4


def test_partials_are_consistent_with_cdf():
    for c in (ClaytonCopula(3, 1.5), GaussianCopula(np.array([[1, 0.3, 0.2], [0.3, 1, 0.1], [0.2, 0.1, 1.0]]))):
        u = np.array([[0.3, 0.6, 0.8]])
        assert c.partial(u, ())[0] == pytest.approx(c.cdf(u)[0], rel=1e-7)
        h = 1e-5
        up, dn = u.copy(), u.copy()
        up[0, 1] += h
        dn[0, 1] -= h
        fd = (c.cdf(up)[0] - c.cdf(dn)[0]) / (2 * h)
        assert c.partial(u, (1,))[0] == pytest.approx(fd, rel=1e-5)


def test_zero_coordinate_kills_partial():
    c = ClaytonCopula(2, 2.0)
    assert c.partial(np.array([[0.0, 0.5]]), (1,))[0] == 0.0


def test_gaussian_high_correlation_rank_dependence():
    c = GaussianCopula(np.array([[1.0, 0.99], [0.99, 1.0]]))
    x = c.sample_neglog_u(np.random.default_rng(1), 20_000)
    assert spearmanr(x[:, 0], x[:, 1]).statistic > 0.9


def test_clayton_sampler_kendall_tau():
    from scipy.stats import kendalltau

    c = ClaytonCopula(2, 2.0)
    x = c.sample_neglog_u(np.random.default_rng(2), 20_000)
    tau = kendalltau(x[:, 0], x[:, 1]).statistic
    assert tau == pytest.approx(ClaytonCopula.kendall_tau(2.0), abs=0.02)


def test_independence_sampler_is_exponential():
    x = IndependenceCopula(2).sample_neglog_u(np.random.default_rng(3), 100_000)
    assert x.mean() == pytest.approx(1.0, abs=0.01)


def test_constructor_errors():
    with pytest.raises(ConfigurationError):
        ClaytonCopula(2, -1.0)
    with pytest.raises(ConfigurationError):
        GaussianCopula(np.array([[1.0, 1.2], [1.2, 1.0]]))
    with pytest.raises(ConfigurationError):
        make_copula("frank", 2)
