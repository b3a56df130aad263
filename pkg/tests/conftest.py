import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

ACCEPTANCE_CRITERIA = 15
_acceptance: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, passed, detail)``."""
    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"AC{number:02d} {'PASS' if passed else 'FAIL'}  {detail}"
        _acceptance[number] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_CRITERIA + 1):
        terminalreporter.write_line(_acceptance.get(n, f"AC{n:02d} FAIL  no result recorded (test errored or was deselected)"))
