import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bootpca.matrixio import TallMatrix
from bootpca.svd import economy_svd

# Property suites run on 100 reproducible cases each.
settings.register_profile("seeded", max_examples=100, derandomize=True, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("seeded")


def random_tall(p, n, seed=0, block_rows=None):
    rng = np.random.default_rng(seed)
    return TallMatrix(rng.standard_normal((p, n)), block_rows)


@pytest.fixture
def small_data():
    return random_tall(20, 8, seed=3, block_rows=6)


@pytest.fixture
def small_svd(small_data):
    return economy_svd(small_data)


# Acceptance lines collected during the run and printed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
