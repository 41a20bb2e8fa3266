import numpy as np
import pytest

from qir.families import TUKEY
from qir.model import Dataset, QirModel, default_links

BETA0 = np.array([1.0, 0.5, -1.0, 1.0, 0.5, -1.0, 1.0, -1.0, 1.0])


@pytest.fixture
def beta0():
    return BETA0.copy()


@pytest.fixture
def table1_model(beta0):
    """Tukey index model at the simulation's true coefficients, p = 3."""
    return QirModel(TUKEY, default_links(TUKEY), beta0, p=3)


def make_dataset(n, seed, beta=BETA0, tail_scaling=None):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, 2))])
    model = QirModel(TUKEY, default_links(TUKEY), beta, p=3, tail_scaling=tail_scaling)
    U = rng.uniform(size=n)
    y = np.asarray(TUKEY.quantile(U, model.index_matrix(X)))
    return Dataset(y, X)


@pytest.fixture
def small_data():
    return make_dataset(80, seed=11)
