import pytest

from sinaifdd.geometry import reference_table
from sinaifdd.measure import MuSampler


@pytest.fixture(scope="session")
def table():
    return reference_table()


@pytest.fixture
def sampler(table):
    return MuSampler(table, seed=12345)


def within(rep, target=0.0, n_se=3.0):
    return abs(rep.value - target) <= n_se * rep.std_error
