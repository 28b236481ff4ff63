import numpy as np
import pytest

from cavityeig.assembly import assemble_system
from cavityeig.grid import BoxDomain, build_grid
from cavityeig.permittivity import AdmissibilityBounds, SymMatrixField, random_smooth_field


@pytest.fixture(scope="session")
def cube4():
    return build_grid(BoxDomain.cube(), (4, 4, 4))


@pytest.fixture(scope="session")
def cube6():
    return build_grid(BoxDomain.cube(), (6, 6, 6))


@pytest.fixture(scope="session")
def box_grid():
    # anisotropic cells and an offset origin
    return build_grid(BoxDomain((0.5, -1.0, 0.0), (1.0, 2.0, 1.5)), (3, 4, 5))


@pytest.fixture(scope="session")
def bounds():
    return AdmissibilityBounds(0.5, 2.0, 50.0)


@pytest.fixture(scope="session")
def smooth_eps6(cube6, bounds):
    return random_smooth_field(cube6, bounds, np.random.default_rng(7))


@pytest.fixture(scope="session")
def identity_system6(cube6):
    return assemble_system(cube6, SymMatrixField.identity(cube6), 4.0)


def random_sym_field(grid, rng, scale=1.0):
    a = rng.standard_normal((grid.n_nodes, 6))
    return SymMatrixField(grid, scale * a)


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
