import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_results: dict = {}
_titles: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion this test checks")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            cid, title = m.args
            _titles[cid] = title
            _results.setdefault(cid, [])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for cid in _results:
        if f"[{cid}]" in report.nodeid or report.nodeid.split("::")[-1].startswith(f"test_{cid.lower()}_"):
            _results[cid].append(report.outcome == "passed")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_results, key=lambda c: int(c[2:])):
        outcomes = _results[cid]
        if not outcomes:
            status = "NOT RUN"
        else:
            status = "PASS" if all(outcomes) else "FAIL"
        terminalreporter.write_line(f"{cid} {status}: {_titles[cid]}")
