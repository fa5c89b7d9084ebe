import numpy as np
import pytest

from crlopf.grid import load_case


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def ieee30():
    return load_case("ieee30")


@pytest.fixture(scope="session")
def two_bus():
    return load_case("two_bus")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when == "teardown" and rep.passed:
        return
    crit = CRITERIA.setdefault(marker.args[0], {"passed": True, "ran": False, "props": []})
    if rep.when == "call":
        crit["ran"] = True
        crit["props"] += [f"{k}={v}" for k, v in rep.user_properties if f"{k}={v}" not in crit["props"]]
    if rep.failed or rep.skipped and rep.when == "setup":
        crit["passed"] = False


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(CRITERIA):
        crit = CRITERIA[key]
        status = "PASS" if crit["passed"] and crit["ran"] else "FAIL"
        detail = f"  ({', '.join(crit['props'])})" if crit["props"] else ""
        terminalreporter.write_line(f"criterion {key}: {status}{detail}")
