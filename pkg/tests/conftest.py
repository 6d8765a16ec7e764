import math

import numpy as np
import pytest

from rdaudit.grid import State, make_grid
from rdaudit.systems import CustomPolynomial, SystemSpec


def heat_spec(d=1.0, mexp=None, bc=None):
    """Single species with zero reaction."""
    r = CustomPolynomial(terms=(((0.0, (0,)),),), a=(1.0,))
    return SystemSpec(r, d=(d,), mexp=mexp, bc=bc)


def cos_state(cells, mean=1.0, amp=1.0):
    g = make_grid(1, [1.0], [cells])
    (x,) = g.centers()
    return State(0.0, g, (mean + amp * np.cos(math.pi * x))[None])


@pytest.fixture
def grid128():
    return make_grid(1, [1.0], [128])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
