import numpy as np
import pytest

from mrcd.image import ImageCube


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_cube(rng, bands, rows, cols, lo=0.0, hi=1.0):
    return ImageCube(rng.uniform(lo, hi, (bands, rows * cols)), rows, cols)


# acceptance summary: one line per criterion at the end of the run

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    num = getattr(report, "criterion", None)
    if num is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _ACCEPTANCE.setdefault(num, []).append((report.outcome, report.criterion_title))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.criterion = m.args[0]
        rep.criterion_title = m.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        outcomes = [o for o, _ in _ACCEPTANCE[num]]
        title = _ACCEPTANCE[num][0][1]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {num:2d} {status}  {title}")
