import os
import sys
from collections import defaultdict

import pytest

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = {
    1: "gradient suite",
    2: "Lovasz vertex oracle",
    3: "DBSCAN oracle and metric",
    4: "heavy-decoder locality and output shape",
    5: "toy convergence and range-loss direction",
    6: "instance pipeline",
    7: "fog and defog",
    8: "formats, bench table, encode speed",
}

_results = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        if rep.failed and not details:
            details = [f"{item.name}: error ({call.excinfo.typename if call.excinfo else 'unknown'})"]
        _results[marker.args[0]].append((rep.passed, "; ".join(details) or item.name))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, title in CRITERIA.items():
        checks = _results.get(n)
        if not checks:
            tr.write_line(f"criterion {n} FAIL  {title}: not evaluated")
            continue
        ok = all(passed for passed, _ in checks)
        tr.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}  {title}")
        for passed, detail in checks:
            tr.write_line(f"    {'ok ' if passed else 'BAD'} {detail}")
