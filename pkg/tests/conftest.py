import numpy as np
import pytest

from lgcde.data import Dataset


def gaussian_pairs(n, rho, seed):
    rng = np.random.default_rng(seed)
    L = np.linalg.cholesky(np.array([[1.0, rho], [rho, 1.0]]))
    return rng.standard_normal((n, 2)) @ L.T


@pytest.fixture
def gauss_ds():
    return Dataset(gaussian_pairs(400, 0.5, 7), ("A", "B"))
