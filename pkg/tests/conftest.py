"""Acceptance reporting: one PASS/FAIL line per ``@pytest.mark.criterion``."""

import pytest

_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.stash[_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, title = mark.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    status = "PASS" if rep.passed else "FAIL"
    line = f"[{status}] criterion {n}: {title}" + (f" ({detail})" if detail else "")
    item.config.stash[_KEY][n] = line


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_KEY]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
