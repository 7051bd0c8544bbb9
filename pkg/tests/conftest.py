import itertools

import numpy as np
import pytest

from ntf_patterns.tensor import FactorModel

ACCEPTANCE_LINES: list[str] = []


def brute_force_nnls(gram, y):
    """Minimum of 0.5 x'Gx - x'y over x >= 0 by enumerating passive sets."""
    q = len(y)
    best_f, best_x = np.inf, None
    for mask in itertools.product([False, True], repeat=q):
        idx = np.flatnonzero(mask)
        x = np.zeros(q)
        if idx.size:
            x[idx] = np.linalg.solve(gram[np.ix_(idx, idx)], y[idx])
        if np.any(x < 0):
            continue
        f = 0.5 * x @ gram @ x - x @ y
        if f < best_f:
            best_f, best_x = f, x
    return best_f, best_x


def random_model(rng, shape, rank, low=0.0):
    return FactorModel(*(low + rng.random((n, rank)) for n in shape))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
