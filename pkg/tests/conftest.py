import math
from pathlib import Path

import pytest

from agehopf.kernels import GammaKernel, PiecewiseConstantKernel
from agehopf.spectral import Nonlinearity, certify_hopf, find_hopf

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
E9 = math.exp(9.0)
SQRT3 = math.sqrt(3.0)

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def gamma3():
    return GammaKernel(3, 0.5, 0.5, 0.5)


@pytest.fixture(scope="session")
def ricker():
    return Nonlinearity("ricker")


@pytest.fixture(scope="session")
def step_kernel():
    # fertility 2 on [1, 2), mortality chosen so that int chi = 1
    return PiecewiseConstantKernel((1.0, 2.0), (2.0,), 0.46817560428269456)


@pytest.fixture(scope="session")
def cert(gamma3, ricker):
    cands = find_hopf(gamma3, ricker, (1e3, 1e4), (0.5, 3.0))
    assert len(cands) == 1
    return certify_hopf(gamma3, ricker, cands[0])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
