"""Shared pytest plumbing for the test suite.

The acceptance tests record a one-line verdict per criterion through the
``acceptance`` fixture; the verdicts are replayed in a dedicated section at
the end of the run so the checklist is readable even when individual tests
fail with long tracebacks.
"""

import pytest

_VERDICTS = []


@pytest.fixture
def acceptance():
    """Record a criterion verdict, print it, and enforce it.

    Call once per criterion after every clause has been measured, so the
    verdict line carries all the numbers even when the assertion fires.
    """

    def record(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'} -- {detail}"
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
