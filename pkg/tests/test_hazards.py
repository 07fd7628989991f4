import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from multidefault.errors import ConfigurationError
from multidefault.hazards import HazardCurve


def test_constant_curve():
    h = HazardCurve.constant(0.1)
    assert h.survival(5.0) == pytest.approx(np.exp(-0.5), abs=1e-15)
    assert h.cumulative(np.inf) == np.inf
    assert h.inverse(0.5) == pytest.approx(5.0)


def test_piecewise_curve_and_zero_segments():
    h = HazardCurve.from_segments([(1.0, 0.0), (3.0, 0.2), (None, 0.1)])
    assert h.cumulative(1.0) == 0.0
    assert h.cumulative(3.0) == pytest.approx(0.4)
    assert h.cumulative(5.0) == pytest.approx(0.6)
    assert h.rate(0.5) == 0.0 and h.rate(2.0) == 0.2
    # the flat zero-rate stretch maps back to its right end
    assert h.inverse(0.0) <= 1.0
    assert h.breakpoints_in(0.5, 4.0) == [1.0, 3.0]


@given(st.lists(st.floats(0.01, 2.0), min_size=1, max_size=4), st.floats(0.0, 10.0))
def test_inverse_roundtrip(rates, y):
    segs = [(float(i + 1), r) for i, r in enumerate(rates)]
    h = HazardCurve.from_segments(segs)
    t = float(h.inverse(y))
    assert float(h.cumulative(t)) == pytest.approx(y, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize(
    "segments",
    [[(1.0, -0.1), (None, 0.1)], [(1.0, 0.1), (None, 0.0)], [(2.0, 0.1), (1.0, 0.1), (None, 0.1)]],
)
def test_invalid_curves(segments):
    with pytest.raises(ConfigurationError):
        HazardCurve.from_segments(segments)
