import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vlnsim import worlds  # noqa: E402


@pytest.fixture(scope="session")
def office():
    """(grid, graph) for the synthetic office floor."""
    return worlds.office_scenario()


@pytest.fixture(scope="session")
def loc_room():
    return worlds.localization_room()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
