import numpy as np
import pytest

from satmix import ScienceTable

_criteria: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number exercised by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            item.user_properties.append(("criterion", marker.args[0]))


def pytest_runtest_logreport(report):
    for key, value in report.user_properties:
        if key != "criterion":
            continue
        outcomes = _criteria.setdefault(value, [])
        if report.failed:
            outcomes.append("fail")
        elif report.when == "call":
            outcomes.append("skip" if report.skipped else "pass")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcomes = _criteria[n]
        status = "FAIL" if "fail" in outcomes else ("PASS" if "pass" in outcomes else "SKIP")
        detail = f"{outcomes.count('pass')}/{len(outcomes)} checks passed"
        terminalreporter.write_line(f"criterion {n:2d}: {status}  ({detail})")


@pytest.fixture
def sign_table():
    """Four units, no control variation, SATE = 0 but SATT far from 0 for some draws."""
    return ScienceTable(y0=[0.0, 0.0, 0.0, 0.0], y1=[1.0, -1.0, -100.0, 100.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
