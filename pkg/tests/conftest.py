import numpy as np
import pytest

from micromacro import butane_model, threeatom_model


@pytest.fixture(scope="session")
def threeatom():
    return threeatom_model(epsilon=1e-4)


@pytest.fixture(scope="session")
def butane():
    return butane_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the caller still asserts ``passed``."""
    def record(label, passed, detail):
        CRITERIA.append(f"{'PASS' if passed else 'FAIL'} {label}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
