import numpy as np
import pytest

from sewnspace.tools.convergence_lab import pulled_string_space
from sewnspace.tools.metric_core import FiniteMetricSpace, sample_sphere3
from sewnspace.tools.revolution_geometry import build_tunnel
from sewnspace.tools.tunnel_curve import build_step_profile

SMALL_N = 1500
SMALL_STRING = 256


@pytest.fixture(scope="session")
def step_profile():
    return build_step_profile(1.0, 0.01)


@pytest.fixture(scope="session")
def tunnel_02():
    return build_tunnel(1.0, 0.2)


@pytest.fixture(scope="session")
def sphere_small():
    return sample_sphere3(SMALL_N, seed=11)


@pytest.fixture(scope="session")
def string_spaces():
    """(base with string nodes, pulled space, a_tube) on a small sample."""
    return pulled_string_space(SMALL_N, seed=11, string_nodes=SMALL_STRING)


@pytest.fixture
def line_space():
    """Four points on a line at 0, 1, 3, 10 with unit weights."""
    x = np.array([0.0, 1.0, 3.0, 10.0])
    return FiniteMetricSpace(np.ones(4), dist=np.abs(x[:, None] - x[None, :]))

