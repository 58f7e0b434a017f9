import numpy as np
import pytest

from gridattn import CoreGrid, GridConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def grid():
    return CoreGrid(GridConfig())
