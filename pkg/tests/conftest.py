import datetime as dt

import pytest

from synth import write_uci_file


@pytest.fixture(scope="session")
def uci_file(tmp_path_factory):
    """Five synthetic weeks in the UCI text format, starting like the real file."""
    path = tmp_path_factory.mktemp("data") / "household_power_consumption.txt"
    info = write_uci_file(path, n_days=35, start=dt.datetime(2006, 12, 16, 17, 24), seed=0)
    info["path"] = path
    return info


@pytest.fixture(scope="session")
def short_uci_file(tmp_path_factory):
    """Two full weeks from Monday 2006-12-18 plus a little slack on both ends."""
    path = tmp_path_factory.mktemp("short") / "household_power_consumption.txt"
    info = write_uci_file(path, n_days=16, start=dt.datetime(2006, 12, 17, 12, 0), seed=3)
    info["path"] = path
    return info


# ---------------------------------------------------------------- acceptance summary

_criteria: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if rep.failed:
        msg = str(rep.longrepr.reprcrash.message) if hasattr(rep.longrepr, "reprcrash") else str(rep.longrepr)
        detail = (detail + "; " if detail else "") + msg.splitlines()[0][:160]
    status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
    _criteria[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status, detail = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {status:4}  {title}" + (f"  [{detail}]" if detail else ""))
