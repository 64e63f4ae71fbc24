"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[request.node.nodeid] = (
            f"{'PASS' if passed else 'FAIL'} [{number:>2}] {title}: {detail}")
        print(ACCEPTANCE_LINES[request.node.nodeid])
        return passed

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if (rep.when == "call" and rep.failed and "test_acceptance" in item.nodeid
            and item.nodeid not in ACCEPTANCE_LINES):
        ACCEPTANCE_LINES[item.nodeid] = f"FAIL {item.name}: raised {call.excinfo.typename}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES.values(), key=lambda s: s.split("]")[0][-2:]):
        terminalreporter.write_line(line)
