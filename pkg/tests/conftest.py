import numpy as np
import pytest

from nirom.fom import FomModel


def scalar_decay(rate=1.0):
    """dy/dt = -rate * y as a one-node model with no load."""
    return FomModel(kind="scalar", capacity=np.array([1.0]), conductivity=np.array([[-rate]]),
                    load_map=np.zeros((1, 1)), input_template=np.array([0.0]), n_params=1,
                    initial_index=0, load_index=0, t_max=10.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Keep a one-line verdict for the terminal summary."""
    mark = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {number} [{mark}] {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
