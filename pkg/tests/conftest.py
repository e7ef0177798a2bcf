import numpy as np
import pytest

from opj.core import ExperimentData

TOY_VALUES = (1.0, 2.0, 3.0, 5.0, 8.0)
TOY_COUNTS = (30, 80, 20, 40, 30)


def toy_values():
    return np.repeat(TOY_VALUES, TOY_COUNTS)


@pytest.fixture
def toy():
    return toy_values()


def linear_data(n=400, coef0=(1.0, 3.0, -2.0), coef1=None, noise=0.0, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, len(coef0) - 1))
    w = np.zeros(n, dtype=int)
    w[rng.permutation(n)[: n // 2]] = 1
    design = np.column_stack([np.ones(n), x])
    coef1 = coef0 if coef1 is None else coef1
    y = np.where(w == 1, design @ np.asarray(coef1), design @ np.asarray(coef0))
    y = y + noise * rng.normal(size=n)
    return ExperimentData(y, w, x)


@pytest.fixture
def lin_data():
    return linear_data(noise=1.0, coef1=(1.5, 3.0, -1.0), seed=3)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
