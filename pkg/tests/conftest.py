"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.fixture
def record_detail(request):
    """Attach a one-line summary (numbers behind the verdict) to the current criterion."""
    def record(text):
        request.node.user_properties.append(("detail", text))
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _RESULTS[mark.args[0]] = (mark.args[1], "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, verdict, detail = _RESULTS[n]
        line = f"criterion {n} [{verdict}] {title}"
        terminalreporter.write_line(line + (f" :: {detail}" if detail else ""))
