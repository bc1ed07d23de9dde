"""Shared pytest wiring: the acceptance suite's one-line-per-criterion report."""

import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """``report(n, ok, text)`` prints and records the verdict line of criterion ``n``."""
    def record(n: int, ok: bool, text: str) -> None:
        line = f"ACCEPTANCE {n:2d} {'PASS' if ok else 'FAIL'}  {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
