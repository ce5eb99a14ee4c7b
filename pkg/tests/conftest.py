import pytest

from pdmforge import pct


@pytest.fixture(scope="session")
def exp_system():
    """beta = 1, nu = 2, levels 0..3 on the default [-10, 25] window."""
    return pct.construct_laguerre_exponential(1.0, 2.0, 3)


@pytest.fixture(scope="session")
def harmonic_system():
    return pct.construct_harmonic_limit(3)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
