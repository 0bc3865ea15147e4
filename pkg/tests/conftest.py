import pytest

VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line; the lines are echoed again in the terminal summary."""

    def record(n, ok, text):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {text}"
        print(line)
        VERDICTS.append((n, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
