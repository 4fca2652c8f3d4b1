import numpy as np
import pytest

from drbc.config import H4_ATOMS, H4_PROBS
from drbc.models import FinitePrior, LqModel, MertonMarket, QuadratureRule, TimeGrid


@pytest.fixture(scope="function")
def market() -> MertonMarket:
    return MertonMarket(r=0.05, sigma=0.4, T=1.0, x0=1.0, alpha=0.5)


@pytest.fixture(scope="function")
def h4_prior() -> FinitePrior:
    return FinitePrior(values=np.array(H4_ATOMS), probs=np.array(H4_PROBS))


@pytest.fixture(scope="function")
def two_point_prior() -> FinitePrior:
    return FinitePrior(values=np.array([0.0, 1.0]), probs=np.array([0.5, 0.5]))


@pytest.fixture(scope="session")
def quad() -> QuadratureRule:
    return QuadratureRule.gauss_hermite(64)


@pytest.fixture(scope="function")
def scalar_lq_model() -> LqModel:
    return LqModel(
        A0=np.zeros((1, 1)),
        A_list=np.zeros((0, 1, 1)),
        G=np.eye(1),
        Sigma=0.5 * np.eye(1),
        Q=np.eye(1),
        Q_T=np.zeros((1, 1)),
        Rmat=np.eye(1),
        grid=TimeGrid(T=2.0, steps=200),
    )
