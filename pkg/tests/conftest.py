import pytest

from ipsense.channel import ChannelParams
from ipsense.simulator import build_paper_schedules


@pytest.fixture(scope="session")
def schedules():
    return build_paper_schedules()


@pytest.fixture(scope="session")
def params():
    return ChannelParams()


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per criterion clause and print it."""
    def record(criterion, clause, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {clause}"
        if detail:
            line += f" ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line, flush=True)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
