import time

import numpy as np
import pytest

from agedecor.synthgen import GeneratorConfig, generate_population
from agedecor.trainer import make_splits, run_matrix

GAMMAS = (0.0, 4.0, 8.0)
SEEDS = (0, 1, 2, 3, 4)

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def default_pool():
    return generate_population(GeneratorConfig(), 0)


@pytest.fixture(scope="session")
def default_splits(default_pool):
    return make_splits(default_pool, GAMMAS, 0)


@pytest.fixture(scope="session")
def main_matrix(default_splits):
    """ours / erm / resampled over 3 gammas x 5 seeds, with wall-clock time."""
    t0 = time.perf_counter()
    res = run_matrix(default_splits, SEEDS, ("ours", "erm", "resampled"), workers=1, keep_artifacts=True)
    return res, time.perf_counter() - t0


@pytest.fixture(scope="session")
def ablation_matrix(default_splits):
    t0 = time.perf_counter()
    res = run_matrix(default_splits, SEEDS, ("ours-no-affinity", "ours-no-coverage"), workers=1)
    return res, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
