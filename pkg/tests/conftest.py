import numpy as np
import pytest

from triseg.tensor import Tensor


def rand(shape, seed, scale=1.0, dtype=np.float32):
    return (np.random.default_rng(seed).standard_normal(shape) * scale).astype(dtype)


def tensor(shape, seed, scale=1.0, requires_grad=False, dtype=np.float32):
    return Tensor(rand(shape, seed, scale, dtype), requires_grad=requires_grad)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
