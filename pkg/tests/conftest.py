import re

_RESULTS = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or report.failed:
        prev = _RESULTS.get(key, True)
        _RESULTS[key] = prev and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), ok in sorted(_RESULTS.items()):
        terminalreporter.write_line(f"criterion {num:2d} {name:<34s} {'PASS' if ok else 'FAIL'}")
