import numpy as np
import pytest

from wavemix.grid import GridSpec, StateVector


@pytest.fixture
def grid16():
    return GridSpec(3, 16, 16.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_state(grid, rng):
    return StateVector(grid, rng.standard_normal(grid.shape), rng.standard_normal(grid.shape))
