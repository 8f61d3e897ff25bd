import numpy as np
import pytest
from hypothesis import strategies as st

from lpcuntz.symbolic import CylinderFunction
from lpcuntz.transfer import Potential, random_potential


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def worked():
    """n=2, rho = 1/2, a = [2, 1]: the closed-form example used throughout."""
    return CylinderFunction(2, 1, [2.0, 1.0]), Potential.uniform(2)


@st.composite
def potentials(draw, max_n=4, max_depth=2):
    n = draw(st.integers(2, max_n))
    depth = draw(st.integers(1, max_depth))
    seed = draw(st.integers(0, 2**32 - 1))
    return random_potential(n, depth, np.random.default_rng(seed))


def random_function(n, depth, rng, complex_=True):
    vals = rng.normal(size=n**depth)
    if complex_:
        vals = vals + 1j * rng.normal(size=n**depth)
    return CylinderFunction(n, depth, vals)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
