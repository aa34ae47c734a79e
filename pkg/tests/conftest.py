import numpy as np
import pytest

from dimensionality_lab.core.gaussian import BlobConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def helmert_features():
    """
    4 x 3 matrix with zero-mean orthonormal columns, so its centered singular values are all 1
    """
    return np.column_stack([
        np.array([1.0, -1.0, 0.0, 0.0]) / np.sqrt(2),
        np.array([1.0, 1.0, -2.0, 0.0]) / np.sqrt(6),
        np.array([1.0, 1.0, 1.0, -3.0]) / np.sqrt(12),
    ])


@pytest.fixture
def small_blobs():
    return BlobConfig(n_samples=200, n_features=12, n_centers=4, cluster_std=1.0, seed=3)


def random_block_covariance(rng: np.random.Generator, m: int, n: int) -> np.ndarray:
    """
    Well-conditioned random joint covariance of dimension n + m
    """
    factor = rng.standard_normal((n + m, n + m))
    return factor @ factor.T + 0.5 * np.eye(n + m)


def central_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """
    Numerical gradient of a scalar function of an array
    """
    grad = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[index] += step
        minus[index] -= step
        grad[index] = (fn(plus) - fn(minus)) / (2 * step)
    return grad
