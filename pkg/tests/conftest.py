import pytest

from gcalc.expectation import ScenarioSet
from gcalc.scenarios import SeedPolicy, TimeGrid, VolatilityBand, default_controls

# Lines printed once at the end of the session by the acceptance tests.
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def band():
    return VolatilityBand(1.0, 2.0)


@pytest.fixture(scope="session")
def grid():
    return TimeGrid.uniform(1.0, 32)


@pytest.fixture(scope="session")
def small_scenarios(band, grid):
    return ScenarioSet(default_controls(band), grid, band, 512, SeedPolicy(7))
