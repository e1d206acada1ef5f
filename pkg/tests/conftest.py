import numpy as np
import pytest

from ideal_dispatch.acceptance import diamond_network, grid_network
from ideal_dispatch.netgraph import OdSpec


@pytest.fixture
def diamond():
    return diamond_network(), OdSpec(("a",), "d")


@pytest.fixture
def grid3():
    return grid_network(), OdSpec(("n00",), "n22")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
