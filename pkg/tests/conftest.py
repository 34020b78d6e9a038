import functools

import pytest

from congruent.pipeline import run_pipeline
from congruent.problem import load_problem

GOLDEN = ("se2", "mobius", "heisenberg", "so3")


@functools.lru_cache(maxsize=None)
def pipeline(name: str):
    """Full pipeline run for a shipped problem, shared by the whole session."""
    return run_pipeline(load_problem(name))


@pytest.fixture(scope="session")
def run():
    return pipeline


@pytest.fixture(scope="session")
def se2():
    return pipeline("se2")


@pytest.fixture(scope="session")
def mobius():
    return pipeline("mobius")


@pytest.fixture(scope="session")
def heisenberg():
    return pipeline("heisenberg")


@pytest.fixture(scope="session")
def so3():
    return pipeline("so3")


# one PASS/FAIL line per acceptance criterion, filled in by test_acceptance
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
