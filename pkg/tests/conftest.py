import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    prev = _RESULTS.get(number, (title, True, []))
    ok = prev[1] and not report.failed
    notes = prev[2] + list(getattr(item, "acceptance_notes", []))
    if report.when == "call" or report.failed:
        _RESULTS[number] = (title, ok, notes)


@pytest.fixture
def note(request):
    """Attach a line of measured values to the acceptance summary."""
    request.node.acceptance_notes = []
    return request.node.acceptance_notes.append


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, ok, notes = _RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
        for line in notes:
            terminalreporter.write_line(f"    {line}")
