import numpy as np
import pytest

from smcomm.marl import ReferentialEnv, TrainConfig, ctde_train
from smcomm.sync import compare_strategies, hetero_fixture


@pytest.fixture(scope="session")
def hetero():
    return hetero_fixture(0)


@pytest.fixture(scope="session")
def hetero_report(hetero):
    return compare_strategies(hetero)


@pytest.fixture(scope="session")
def marl_env():
    return ReferentialEnv(4)


@pytest.fixture(scope="session")
def marl_trained(marl_env):
    return ctde_train(marl_env, TrainConfig(seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
