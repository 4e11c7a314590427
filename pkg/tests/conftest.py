import numpy as np
import pytest

from gqoed import criteria as cr
from gqoed.validation import small_example1, tracer_instance


@pytest.fixture(scope="session")
def ex1():
    """Example-1 problem at n=8 with 3x3 candidate sensors."""
    return small_example1()


@pytest.fixture(scope="session")
def ex1_gd(ex1):
    return cr.GoalDerivatives.from_goal(ex1.goal, ex1.prior.mean, ex1.prior.mean).materialize()


@pytest.fixture(scope="session")
def tracer():
    return tracer_instance(16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel(a, b):
    return abs(a - b) / max(abs(b), 1e-300)
