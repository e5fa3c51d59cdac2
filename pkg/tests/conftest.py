import pytest

_criteria: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _criteria[number] = (title, status)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"[{status}] criterion {number:2d}: {title}")
