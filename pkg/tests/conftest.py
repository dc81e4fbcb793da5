import numpy as np
import pytest

from acceptance_log import LINES
from collabauth.scenario import load_scenario


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(LINES):
        terminalreporter.write_line(LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def indoor():
    return load_scenario("indoor")


@pytest.fixture(scope="session")
def outdoor():
    return load_scenario("outdoor")


@pytest.fixture(scope="session")
def campaign():
    return load_scenario("campaign")
