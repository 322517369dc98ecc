import numpy as np
import pytest

from diffsim import data


@pytest.fixture(scope="session")
def gaussian3():
    return data.gaussian_potential(3, np.array([2.0, 1.0, 0.5]))


@pytest.fixture(scope="session")
def curvilinear3():
    return data.curvilinear_potential(3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
