"""Shared fixtures: the acceptance report collected across the session."""

import pytest

_REPORT = []


@pytest.fixture(scope="session")
def acceptance():
    """``record(criterion, ok, detail)`` adds one line to the acceptance report."""

    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _REPORT.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_REPORT, key=lambda s: s.split("criterion ", 1)[1]):
        terminalreporter.write_line(line)
