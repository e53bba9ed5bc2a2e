import numpy as np
import pytest

from ifest import synthdata


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def uniform_2000():
    return synthdata.sample("uniform", 2000, seed=11)


@pytest.fixture(scope="session")
def f2_2000():
    return synthdata.sample("f2", 2000, seed=12)
