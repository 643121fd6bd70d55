import numpy as np
import pytest

from adaptive_ivus.beamform import ImageGrid
from adaptive_ivus.simkernel import ArrayGeometry

# criterion lines collected by test_acceptance, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def small_geom():
    """8 elements, aperture 3: cheap enough for exhaustive checks."""
    return ArrayGeometry(num_elements=8, sub_aperture=3, num_fast_time_samples=192)


@pytest.fixture
def small_grid():
    return ImageGrid(num_scanlines=32, num_depth_samples=64, max_depth=4.0)


@pytest.fixture
def geom():
    return ArrayGeometry()


@pytest.fixture
def grid():
    return ImageGrid()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
