import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Collects one status line per acceptance criterion for the summary."""
    def _record(label: str, passed: bool, detail: str = ""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {label}{': ' + detail if detail else ''}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
