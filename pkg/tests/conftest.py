import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from twostage import TrialConfig, bundled_scenarios

DATA = Path(__file__).parent / "data"

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def table1():
    return json.loads((DATA / "table1.json").read_text())


@pytest.fixture(scope="session")
def reference_oc():
    return json.loads((DATA / "reference_oc.json").read_text())


@pytest.fixture(scope="session")
def scenarios():
    return bundled_scenarios()


@pytest.fixture(scope="session")
def cfg():
    return TrialConfig()


# ------------------------------------------------- acceptance summary lines

_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        verdict = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
