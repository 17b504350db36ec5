import numpy as np
import pytest

from affectsteer import nn


def random_mlp(dims, seed):
    return nn.init_mlp(dims, seed)


def central_diff(f, x, step=1e-4):
    """Central finite-difference gradient of scalar f at x (flat array)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        g.flat[i] = (f(hi) - f(lo)) / (2 * step)
    return g


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return np.max(np.abs(a - b) / denom)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
