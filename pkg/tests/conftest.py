import numpy as np
import pytest

from itpnet.config import TrainConfig
from itpnet.data import build_arrays, generate_dataset


CRITERIA = {}  # criterion number -> one-line verdict, filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    """Small but complete model: every pathway enabled, fast to train."""
    return TrainConfig(N=4, C=2, L=2, d=16, heads=2, ffn_inner=32, decoder_hidden=32, batch_size=8, steps=20)


@pytest.fixture(scope="session")
def tiny_scenes():
    return generate_dataset(64, seed=11)


@pytest.fixture(scope="session")
def tiny_arrays(tiny_config, tiny_scenes):
    c = tiny_config
    return build_arrays(tiny_scenes, c.T, c.N, c.M)
