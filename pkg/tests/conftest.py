import numpy as np
import pytest

from conceptseg.synthetic import default_state, make_scene

_acceptance: dict[str, str] = {}


@pytest.fixture(scope="session")
def state():
    return default_state()


@pytest.fixture()
def scene():
    return make_scene(np.random.default_rng(42))


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion, see terminal summary
    if "test_acceptance" not in report.nodeid or report.when != "call":
        return
    name = report.nodeid.rsplit("::", 1)[-1].removeprefix("test_").replace("_", "-")
    _acceptance[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance")
    for name, verdict in _acceptance.items():
        terminalreporter.write_line(f"ACCEPTANCE {name}: {verdict}")
