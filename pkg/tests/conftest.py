import numpy as np
import pytest

from ivkit import DGPConfig, ModelSpec, generate

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def strong_data():
    d, truth = generate(DGPConfig.strong(n=4000, seed=11))
    return d, truth


@pytest.fixture(scope="session")
def iv_spec():
    return ModelSpec("stay", ["hukou"], ["family", "child"], ["gender", "edu", "lnincome"])


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
