"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

# number -> (title, passed, detail)
RESULTS: dict[int, tuple[str, bool, str]] = {}
# number -> measured values, filled in by the tests themselves
DETAILS: dict[int, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    number, title = mark.args
    RESULTS[number] = (title, rep.passed, DETAILS.get(number, ""))


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(RESULTS):
        title, ok, detail = RESULTS[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
