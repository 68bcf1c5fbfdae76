import numpy as np
import pytest

from ivforge.basetypes import LinearInteraction
from ivforge.data_model import Dataset
from ivforge.dgp import simulate


def structural_noise(ds: Dataset, spec: LinearInteraction) -> np.ndarray:
    """Recover eps from a LinearInteraction draw."""
    x1, x2 = ds.x[:, 0], ds.x[:, 1]
    return ds.y - spec.alpha - spec.theta * ds.d - spec.pi1 * x1 - spec.pi2 * x2 - spec.rho_interact * x1 * x2


def cov_se(a: np.ndarray, b: np.ndarray) -> float:
    """Monte Carlo SE of a sample covariance."""
    prod = (a - a.mean()) * (b - b.mean())
    return float(prod.std(ddof=1) / np.sqrt(a.shape[0]))


@pytest.fixture
def linear_spec() -> LinearInteraction:
    return LinearInteraction()


@pytest.fixture
def linear_ds(linear_spec) -> Dataset:
    return simulate(linear_spec, 5000, seed=1)
