import numpy as np
import pytest

from qfield.covar import FieldModel
from qfield.gauge import GaugeSpec


@pytest.fixture(scope="session")
def bm_gauge():
    return GaugeSpec("powerlaw", nu=0.5)


@pytest.fixture(scope="session")
def pl25_gauge():
    return GaugeSpec("powerlaw", nu=0.25)


@pytest.fixture(scope="session")
def lm_gauge():
    return GaugeSpec("logmodulated", nu=0.5, gamma=1.0)


@pytest.fixture(scope="session")
def bm_1d(bm_gauge):
    return FieldModel(bm_gauge, 1, (np.array([0.0]), np.array([1.0])))


@pytest.fixture(scope="session")
def pl25_1d(pl25_gauge):
    return FieldModel(pl25_gauge, 1, (np.array([0.0]), np.array([1.0])))


@pytest.fixture(scope="session")
def bm_2d(bm_gauge):
    return FieldModel(bm_gauge, 2, (np.zeros(2), np.ones(2)))


@pytest.fixture(scope="session")
def pl25_2d(pl25_gauge):
    return FieldModel(pl25_gauge, 2, (np.zeros(2), np.ones(2)))
