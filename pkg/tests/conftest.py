import os

import numpy as np
import pytest

_RESULTS = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is not None:
        _RESULTS.append((crit, report.outcome))


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    mark = item.get_closest_marker("acceptance")
    if mark is not None:
        item.user_properties.append(("criterion", f"{mark.args[0]:>4}  {mark.args[1]}"))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit, outcome in sorted(_RESULTS, key=lambda r: int(r[0].split()[0][2:])):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{status}] {crit}")


def pytest_report_header(config):
    from mapalign.kernels import BACKEND

    flag = os.environ.get("MAPALIGN_DISABLE_NUMBA", "")
    return f"mapalign kernels: {BACKEND} (MAPALIGN_DISABLE_NUMBA={flag!r})"
