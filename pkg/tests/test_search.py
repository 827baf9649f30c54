import math

import pytest
from hypothesis import given, strategies as st

from modelaided.oracles.search import golden_section_max


@given(st.floats(-50.0, 50.0), st.floats(0.1, 10.0))
def test_quadratic_peak(center, width):
    res = golden_section_max(lambda x: -((x - center) / width) ** 2, center - 60.0, center + 75.0, tol=1e-12)
    assert res.converged
    assert abs(res.x - center) <= 1e-5 * max(1.0, abs(center))


def test_monotone_returns_endpoint():
    assert golden_section_max(lambda x: x, 0.0, 2.0).x == 2.0
    assert golden_section_max(lambda x: -x, 0.0, 2.0).x == 0.0


def test_iteration_count_matches_shrink_rate():
    res = golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0, tol=1e-8)
    expected = math.ceil(math.log(1e-8) / math.log((math.sqrt(5) - 1) / 2))
    assert abs(res.iterations - expected) <= 1


def test_bad_bracket():
    with pytest.raises(ValueError):
        golden_section_max(lambda x: x, 1.0, 1.0)
    with pytest.raises(ValueError):
        golden_section_max(lambda x: x, 0.0, 1.0, tol=0.0)


def test_max_iter_flag():
    res = golden_section_max(lambda x: -(x - 0.3) ** 2, 0.0, 1.0, tol=1e-15, max_iter=5)
    assert not res.converged and res.iterations == 5
