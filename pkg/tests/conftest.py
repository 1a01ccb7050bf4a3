import numpy as np
import pytest

from plapspec.grid import GridDomain


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_mask(rng, shape, density=0.6):
    m = rng.random(shape) < density
    if not m.any():
        m.flat[0] = True
    return m


def two_intervals(n_long: int = 499, n_short: int = 299, gap: int = 1) -> GridDomain:
    """(0, 1) and (0, 0.6) on one row when ``n_long + 1`` is a multiple of 5."""
    m = np.zeros(n_long + gap + n_short, dtype=bool)
    m[:n_long] = True
    m[n_long + gap :] = True
    return GridDomain(m, 1.0 / (n_long + 1))


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
