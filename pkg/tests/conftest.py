import math

import numpy as np
import pytest

from carlemanlab.geometry import DomainSpec, compute_gamma, construct_d

SQRT3 = math.sqrt(3.0)


@pytest.fixture
def unit_interval():
    return DomainSpec.interval(0.0, 1.0, 101)


@pytest.fixture
def observer(unit_interval):
    return compute_gamma(unit_interval, (-1.0,))


@pytest.fixture
def heat_geometry():
    d = DomainSpec.interval(0.0, 1.0, 101)
    return construct_d(d, ["x1_hi"], omega0=((0.5,), (0.9,)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
