import re

import numpy as np
import pytest

_ACCEPTANCE: dict[int, tuple[str, str]] = {}
_DETAILS: dict[int, str] = {}


@pytest.fixture
def report_detail(request):
    """Attach a one-line measurement to the acceptance summary of the running criterion."""
    m = re.search(r"test_criterion_(\d+)", request.node.name)

    def record(text: str):
        if m:
            _DETAILS[int(m.group(1))] = text

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    k = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[k] = (m.group(2), "PASS" if report.outcome == "passed" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        name, outcome = _ACCEPTANCE[k]
        detail = _DETAILS.get(k, "")
        terminalreporter.write_line(f"criterion {k} [{outcome}] {name}" + (f": {detail}" if detail else ""))
