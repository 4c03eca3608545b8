"""Shared fixtures plus the acceptance-summary reporting hook.

Tests marked ``@pytest.mark.criterion(n, "description")`` are collected
into a numbered pass/fail table printed after the run, so the acceptance
status is readable at a glance without scrolling through the full log.
"""

from __future__ import annotations

import pytest

_RESULTS: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, description): acceptance criterion this test certifies"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = int(marker.args[0])
    desc = str(marker.args[1])
    prev = _RESULTS.get(num, (desc, True))
    _RESULTS[num] = (desc, prev[1] and report.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num in sorted(_RESULTS):
        desc, ok = _RESULTS[num]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {verdict} {desc}")
