from __future__ import annotations

import pytest

# filled by test_acceptance: criterion number -> (name, passed, detail)
CRITERIA: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        name, passed, detail = CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number:2d} {name}: {detail}")


@pytest.fixture
def criterion():
    def record(number: int, name: str, passed: bool, detail: str) -> None:
        CRITERIA[number] = (name, bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'} criterion {number} {name}: {detail}")

    return record
