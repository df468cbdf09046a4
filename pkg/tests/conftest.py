import numpy as np
import pytest

from trainer.network import Activation, Conv2D, Dense, Flatten, NetworkSpec


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def planted_low_rank(seed, rows=64, cols=32, rank=5, noise=0.01):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((rows, rank))
    b = rng.standard_normal((cols, rank))
    return a @ b.T + noise * rng.standard_normal((rows, cols))


def pure_noise(seed, rows=64, cols=32, std=1.0):
    return std * np.random.default_rng(seed).standard_normal((rows, cols))


@pytest.fixture
def planted():
    return planted_low_rank(0)


@pytest.fixture
def mlp_spec():
    return NetworkSpec(input_shape=(2,), layers=[Dense(2, 8), Activation("tanh"), Dense(8, 2)], seed=3)


@pytest.fixture
def conv_spec():
    return NetworkSpec(
        input_shape=(5, 5, 1),
        layers=[Conv2D(3, 3, 1, 4), Activation("tanh"), Flatten(), Dense(36, 2)],
        seed=5,
    )
