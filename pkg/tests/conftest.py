import numpy as np
import pytest

from retmatch.world import WorldConfig, generate_world


@pytest.fixture(scope="session")
def small_world():
    return generate_world(WorldConfig(n_x=30, n_y=40, d=5, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
