import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    n, title = marker.args
    entry = _criteria.setdefault(n, {"title": title, "status": "PASS", "detail": ""})
    if rep.failed:
        entry["status"] = "FAIL"
    elif rep.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"
    entry["detail"] = dict(item.user_properties).get("detail", entry["detail"])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        line = f"{e['status']} criterion {n}: {e['title']}"
        terminalreporter.write_line(line + (f" ({e['detail']})" if e["detail"] else ""))
