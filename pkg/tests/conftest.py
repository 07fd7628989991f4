import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from multidefault.hazards import HazardCurve
from multidefault.law import DefaultLawModel, FactorChain

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def curves(*rates):
    return [HazardCurve.constant(r) for r in rates]


def gaussian_corr(n, rho):
    c = np.full((n, n), rho)
    np.fill_diagonal(c, 1.0)
    return c


@pytest.fixture
def clayton2():
    return DefaultLawModel.clayton(curves(0.15, 0.2), 2.0)


@pytest.fixture
def factor_model():
    chain = FactorChain((0.5, 1.5), (0.5, 0.5), 1.0)
    return DefaultLawModel.clayton(curves(0.15, 0.2), 1.0).factor_scaled(chain)
