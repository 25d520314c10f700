"""Shared fixtures and the acceptance-summary terminal hook."""

import pytest

# test_acceptance appends one formatted line per criterion here; the
# terminal-summary hook replays them so the pass/fail ledger is visible
# even with output capture on.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_lines():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
