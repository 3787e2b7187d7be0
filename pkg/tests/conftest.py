import pytest

from vinrs.cli import _keep_freed_memory

_keep_freed_memory()

# (criterion number, passed, detail) appended by the acceptance tests
CRITERIA = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERIA.append((number, passed, detail))
    print(f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}")


@pytest.fixture
def criterion():
    return record_criterion


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
