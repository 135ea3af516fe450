import numpy as np
import pytest

from gradplast.curl import CurlOperator
from gradplast.elasticity import ElasticSolver, ElasticTensor, HardeningMap
from gradplast.grid import Grid


@pytest.fixture(scope="session")
def grid6():
    return Grid.box(6)


@pytest.fixture(scope="session")
def grid8():
    return Grid.box(8)


@pytest.fixture(scope="session")
def curl6(grid6):
    return CurlOperator(grid6)


@pytest.fixture(scope="session")
def solver8(grid8):
    return ElasticSolver(grid8, ElasticTensor(grid8, 1.0, 1.0), tol_cg=1e-10)


@pytest.fixture(scope="session")
def hardening():
    return HardeningMap.isotropic(0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each; collected here, printed at the end
ACCEPTANCE = {}


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, detail)``; the outcome comes from the test result."""
    def record(number, detail):
        ACCEPTANCE[number] = [request.node.nodeid, detail, None]
    yield record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        for entry in ACCEPTANCE.values():
            if entry[0] == item.nodeid:
                entry[2] = rep.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        _, detail, ok = ACCEPTANCE[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
