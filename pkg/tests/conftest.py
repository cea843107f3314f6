import sys

import pytest

from invlab import catalog


@pytest.fixture
def circle():
    return catalog.circle(controls=((1.0,),))


@pytest.fixture
def disk():
    return catalog.ball(2, name="disk")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
