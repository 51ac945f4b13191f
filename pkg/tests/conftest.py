import numpy as np
import pytest
from hypothesis import settings

from impact_hedge.model import GammaCap, ImpactMarket

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def market():
    return ImpactMarket.constant(sigma=0.2, impact=0.5)


@pytest.fixture
def cap(market):
    return GammaCap.paired(market, 1.75)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
