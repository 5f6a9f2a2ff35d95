import pytest

_LINES: list = []


@pytest.fixture(scope="session")
def report():
    """Record one summary line per acceptance criterion; printed at the end of the run."""
    def add(number, ok, detail):
        _LINES.append((number, "PASS" if ok else "FAIL", detail))
    return add


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(_LINES):
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {detail}")
