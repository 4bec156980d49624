"""Shared pytest hooks.

Acceptance tests record one verdict line each through the ``verdict``
fixture; the lines are repeated in the terminal summary so they show up
without ``-s``.
"""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    def record(name, passed, detail):
        line = f"{name}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
