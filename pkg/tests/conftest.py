import pytest

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record ``criterion N: PASS|FAIL details`` for the terminal summary, then assert."""

    def record(number: int, ok: bool, details: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {details}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
