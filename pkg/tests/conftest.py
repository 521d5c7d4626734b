import numpy as np
import pytest

from terrainmotion.motion import default_skeleton
from terrainmotion.terrain import TerrainGrid


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture
def flat_terrain():
    return TerrainGrid(0.0, 0.0, 0.4, 0.4, np.zeros((24, 24)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
