import os
import sys

import pytest

HERE = os.path.dirname(__file__)
FIXTURES = os.path.join(HERE, "fixtures")


@pytest.fixture
def trace50():
    return os.path.join(FIXTURES, "trace50.txt")


@pytest.fixture
def stub_tracer():
    return [sys.executable, os.path.join(HERE, "stub_tracer.py")]


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    lines = getattr(acceptance, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
