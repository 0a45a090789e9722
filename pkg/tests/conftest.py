import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("mtdetect", deadline=None, max_examples=40)
settings.load_profile("mtdetect")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def brute_ac3(x, l1, l2):
    """Direct (1/L) sum over i of x[i] x[i+l1] x[i+l2], any signed shifts."""
    L = len(x)
    tot = 0.0
    for i in range(-2 * L, 2 * L):
        idx = (i, i + l1, i + l2)
        if all(0 <= j < L for j in idx):
            tot += x[idx[0]] * x[idx[1]] * x[idx[2]]
    return tot / L


def brute_ac2(x, l):
    L = len(x)
    return sum(x[i] * x[i + l] for i in range(L) if 0 <= i + l < L) / L
