"""Prints one PASS/FAIL line per acceptance criterion after the run."""

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when != "call":
        return
    number, title = marker.args
    passed = call.excinfo is None
    detail = dict(item.user_properties).get("detail", "")
    _results[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_results):
        title, passed, detail = _results[number]
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {title}"
        tr.write_line(line + (f"  [{detail}]" if detail else ""))
