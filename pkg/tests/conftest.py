import numpy as np
import pytest

from mch.blowup import design_collapse_datum, run_to_blowup
from mch.momentum import build_momentum

BUMP4 = "bump(4)"
# narrow tall bump: has a witness label, so the upper bound t* is available
WITNESS = "bump(c=10, width=0.1, L=0.1)"

ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def bump4():
    return build_momentum(BUMP4)


@pytest.fixture(scope="session")
def witness():
    return build_momentum(WITNESS)


@pytest.fixture(scope="session")
def bump4_report(bump4):
    return run_to_blowup(bump4, N=129, deltaStop=1e-4)


@pytest.fixture(scope="session")
def witness_report(witness):
    return run_to_blowup(witness, N=129, deltaStop=1e-4)


@pytest.fixture(scope="session")
def peakon_datum(bump4):
    return design_collapse_datum(bump4, 257, 0.19, 0.43, 0.15)


@pytest.fixture(scope="session")
def peakon_report(peakon_datum):
    return run_to_blowup(peakon_datum, N=257, deltaStop=1e-4)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
