"""Collects acceptance verdicts and prints them after the run."""
import pytest

ACCEPTANCE: dict = {}


@pytest.fixture
def verdict(request):
    """Record a PASS/FAIL line for one acceptance criterion.

    The test body calls ``verdict(n, text)`` before asserting; the line is
    marked PASS only if the test itself passes.
    """
    def record(n: int, text: str):
        ACCEPTANCE[n] = [text, request.node]
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        for n, entry in ACCEPTANCE.items():
            if entry[1] is item:
                entry.append(rep.passed)
                print(f"\n{'PASS' if rep.passed else 'FAIL'} criterion {n}: {entry[0]}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        text, _, *ok = ACCEPTANCE[n]
        mark = "PASS" if ok and ok[0] else "FAIL"
        terminalreporter.write_line(f"{mark} criterion {n}: {text}")
