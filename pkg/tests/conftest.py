import numpy as np
import pytest

from helmsman.forecast import LoadProfileSpec
from helmsman.model import MW, PCM_RATING, PGM_RATING, BatterySpec, DeviceRating
from helmsman.qpsolve import QpProblem, solve


@pytest.fixture(scope="session", autouse=True)
def compiled_solver():
    """Compile (or load) the solver kernels once so timed tests measure solving only."""
    solve(QpProblem(np.eye(2), [-1.0, 0.0], A=[[1.0, 1.0]], b=[0.5], lb=[0, 0], ub=[1, 1]))
    solve(QpProblem(np.eye(2), [-1.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[0.5], lb=[0, 0], ub=[1, 1]))


@pytest.fixture
def gen():
    return PGM_RATING


@pytest.fixture
def ess():
    return PCM_RATING


@pytest.fixture
def batt():
    return BatterySpec()


@pytest.fixture
def roomy():
    """Ratings loose enough that only the objective matters."""
    return DeviceRating(100 * MW, 1e6 * MW, 0.0, 100 * MW), DeviceRating(100 * MW, 1e6 * MW, -100 * MW, 100 * MW)


def random_qp(rng, n=None, with_eq=True):
    """Random strictly convex QP with boxes, general rows and an optional equality."""
    n = n or int(rng.integers(2, 7))
    M = rng.normal(size=(n, n))
    H = M @ M.T + 0.1 * np.eye(n)
    f = rng.normal(size=n) * 3
    x0 = rng.uniform(-1, 1, size=n)  # interior point keeps the problem feasible
    lb = x0 - rng.uniform(0.2, 2, size=n)
    ub = x0 + rng.uniform(0.2, 2, size=n)
    m = int(rng.integers(0, 5))
    A = rng.normal(size=(m, n))
    b = A @ x0 + rng.uniform(0.05, 1, size=m)
    A_eq = b_eq = None
    if with_eq and rng.random() < 0.6:
        A_eq = rng.normal(size=(1, n))
        b_eq = A_eq @ x0
    return QpProblem(H, f, A_eq, b_eq, A if m else None, b if m else None, lb, ub)


def pulse_load(baseline_mw=8.0, pulses=(), total=10.0):
    return LoadProfileSpec(baseline_mw * MW, tuple(pulses), total)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
