import numpy as np
import pytest

from shrinker_lab.geometry import make_cylinder, make_gaussian, uniform_grid
from shrinker_lab.operator import assemble, spectrum

# Lines recorded by the acceptance tests, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gauss():
    return make_gaussian(3, uniform_grid(0.0, 30.0, 2001))


@pytest.fixture(scope="session")
def cyl():
    return make_cylinder(2, uniform_grid(-30.0, 30.0, 2001))


@pytest.fixture(scope="session")
def small_cyl():
    """Coarse cylinder used by the time-dependent tests."""
    bg = make_cylinder(2, uniform_grid(-30.0, 30.0, 401))
    opm = assemble(bg)
    return bg, opm, spectrum(opm, bg, 6, -0.25)


@pytest.fixture(scope="session")
def small_gauss():
    bg = make_gaussian(3, uniform_grid(0.0, 20.0, 401))
    opm = assemble(bg)
    return bg, opm, spectrum(opm, bg, 4, -0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
