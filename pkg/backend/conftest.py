import numpy as np
import pytest

from apps.assign.depthfield import DepthGrid
from apps.assign.scenesim import figure1_scenario


@pytest.fixture
def flat_grid():
    """50 x 50 cells of constant depth, 200 x 200 pixels."""
    return DepthGrid(np.full((50, 50), 10.0), stride=4.0)


@pytest.fixture
def make_grid():
    def _make(values, stride=4.0):
        return DepthGrid(np.asarray(values, dtype=np.float64), stride=stride)
    return _make


@pytest.fixture(scope='session')
def figure1():
    return figure1_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
