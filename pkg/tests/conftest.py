import numpy as np
import pytest

from hydroschro.fields import Grid


def cosine(grid, mean=1.0, amp=0.3, sign=1.0):
    return mean + sign * amp * np.cos(2 * np.pi * grid.centers / grid.length)


@pytest.fixture
def grid64():
    return Grid(64)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240611)


# acceptance lines are collected here and echoed after the run, so they
# show up in captured logs even for passing tests
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
