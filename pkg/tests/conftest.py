import numpy as np
import pytest

from graphfm import autograd as ag


@pytest.fixture(autouse=True)
def float64_mode():
    # oracle comparisons are specified in 64-bit arithmetic
    ag.use_float64(True)
    ag.get_tape().clear()
    yield
    ag.use_float64(None)
    ag.get_tape().clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance verdict line; all lines are repeated in the terminal summary."""
    def add(line):
        ACCEPTANCE_LINES.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
