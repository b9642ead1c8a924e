import numpy as np
import pytest

from biharm import Field, make_grid


@pytest.fixture(scope="session")
def g1():
    return make_grid(1, 512, 16.0)


@pytest.fixture(scope="session")
def g1_coarse():
    return make_grid(1, 256, 16.0)


@pytest.fixture(scope="session")
def g2_small():
    return make_grid(2, 64, 12.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20260817)


@pytest.fixture(scope="session")
def gauss1(g1):
    """Unit-amplitude centered Gaussian exp(-x^2/2) on the d=1 grid."""
    x = g1.axes[0]
    return Field(g1, np.exp(-0.5 * x**2))
