"""Shared test plumbing.

The acceptance tests record a one-line verdict each; those lines are echoed
in the terminal summary so they are visible even with output capture on.
"""

import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def record_criterion():
    def _record(line):
        _ACCEPTANCE_LINES.append(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
