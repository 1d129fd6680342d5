import sys

import numpy as np
import pytest

from exadmm.data import FeedbackMatrix


def random_matrix(n_users, n_items, density, seed, min_per_row=1):
    """Random binary pattern with every user and item holding at least one entry."""
    rng = np.random.default_rng(seed)
    M = rng.random((n_users, n_items)) < density
    for i in range(n_users):
        if M[i].sum() < min_per_row:
            M[i, rng.choice(n_items, size=min_per_row, replace=False)] = True
    for j in range(n_items):
        if not M[:, j].any():
            M[rng.integers(n_users), j] = True
    rows, cols = np.nonzero(M)
    return FeedbackMatrix.from_pairs(rows, cols, n_users, n_items)


@pytest.fixture
def toy_matrix():
    return random_matrix(5, 4, 0.5, seed=0)


@pytest.fixture
def small_matrix():
    return random_matrix(30, 20, 0.2, seed=1)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
