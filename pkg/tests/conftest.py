import numpy as np
import pytest

from scripsim.core import AgentType, Population, two_cost_population


@pytest.fixture(scope="session")
def two_types():
    return two_cost_population()


@pytest.fixture
def one_type():
    return Population((AgentType(0.05, 1, 1, 0.95, 1),), (1.0,), n=1000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
