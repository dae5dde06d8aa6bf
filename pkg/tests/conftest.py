from __future__ import annotations

import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; printed in the terminal summary."""

    def record(criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE[criterion] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
