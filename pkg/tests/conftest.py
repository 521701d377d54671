import numpy as np
import pytest

from foldfinder.problems import build_bratu_fd, build_convex_concave_fd, build_linear, build_power_flow
from foldfinder.solver import SolveConfig

E = np.e


@pytest.fixture
def symmetric_linear():
    return build_linear([[2.0, 1.0], [1.0, 2.0]])


@pytest.fixture
def bratu1():
    return build_bratu_fd(1)


@pytest.fixture
def bratu2():
    return build_bratu_fd(2)


@pytest.fixture
def power_flow():
    return build_power_flow(1.0, 1.0)


@pytest.fixture
def convex_concave1():
    return build_convex_concave_fd(1, q=0.5, gamma=2.0)


@pytest.fixture
def fast_config():
    return SolveConfig(multistart=4, seed=0, workers=2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def builtin_systems():
    """(name, system, box of safe interior points) for gradient checks."""
    return [
        ("linear", build_linear([[0.0, 2.0], [3.0, 0.0]]), ([0.2, 0.2], [5.0, 5.0])),
        ("power-flow", build_power_flow(1.0, 1.0), ([-1.2, 0.1], [1.2, 2.0])),
        ("convex-concave", build_convex_concave_fd(5), ([0.2] * 5, [2.0] * 5)),
        ("bratu", build_bratu_fd(5), ([0.1] * 5, [2.5] * 5)),
    ]
