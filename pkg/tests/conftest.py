import pytest

_results: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, label = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _results[number] = ("PASS" if report.passed else "FAIL", label)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        status, label = _results[number]
        terminalreporter.write_line(f"[{status}] {number:2d}. {label}")
