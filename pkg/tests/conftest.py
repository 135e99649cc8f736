import numpy as np
import pytest

from lorenzlab.maps import CANON, PerturbedFamily
from lorenzlab.noise import NoiseModel
from lorenzlab.transfer import partition_for


@pytest.fixture(scope="session")
def family():
    return PerturbedFamily(CANON)


@pytest.fixture(scope="session")
def model():
    return NoiseModel(eps=0.005, seed=42)


@pytest.fixture(scope="session")
def small_model():
    return NoiseModel(eps=0.001, seed=42)


@pytest.fixture(scope="session")
def part64(family):
    return partition_for(family, 64)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
