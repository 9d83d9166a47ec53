import numpy as np
import pytest

from pilotwaves.grid import Grid1D
from pilotwaves.model import PairInteractionSpec, SystemSpec, TrapSpec, make_basis, trap_ground_state


def pytest_configure(config):
    np.seterr(over="raise", invalid="raise")


@pytest.fixture(scope="session")
def grid():
    return Grid1D(-16.0, 16.0, 256)


@pytest.fixture(scope="session")
def quench2():
    """Two bosons, unit trap, unit harmonic interaction switched on suddenly."""
    return SystemSpec(2, TrapSpec(1.0, 1.0), PairInteractionSpec("harmonic", 1.0))


@pytest.fixture(scope="session")
def basis6(quench2, grid):
    return make_basis(quench2, 6, grid)


@pytest.fixture(scope="session")
def phi0(grid):
    return trap_ground_state(TrapSpec(), grid)


def gaussian(x, x0=0.0, p0=0.0):
    return np.pi ** -0.25 * np.exp(-0.5 * (x - x0) ** 2 + 1j * p0 * x)


_VERDICTS = []


@pytest.fixture(scope="session")
def verdict(request):
    """Record one acceptance line; shown inline and again in the terminal summary."""
    tr = request.config.pluginmanager.get_plugin("terminalreporter")

    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        _VERDICTS.append(line)
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
