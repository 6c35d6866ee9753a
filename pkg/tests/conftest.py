import numpy as np
import pytest

from apexlqg.scenario import load_scenario


@pytest.fixture(scope="session")
def default_scenario():
    return load_scenario("default")


@pytest.fixture(scope="session")
def pot(default_scenario):
    return default_scenario.potential


@pytest.fixture(scope="session")
def mass(default_scenario):
    return default_scenario.particle.m


@pytest.fixture(scope="session")
def cal(default_scenario):
    return default_scenario.calibrated_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
