import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance_line():
    """Record one summary line for the acceptance report."""
    def record(number, name, ok, detail=""):
        label = f"criterion {number}" if float(number).is_integer() else f"criterion {int(number)}"
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {name}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
