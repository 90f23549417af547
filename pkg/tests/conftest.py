import pytest

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion and print it."""

    def report(label: str, ok: bool, detail: str) -> None:
        line = f"criterion {label}: {'PASS' if ok else 'FAIL'} {detail}"
        ACCEPTANCE_LINES[label] = line
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for label in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.rstrip("abcd")), s)):
            terminalreporter.write_line(ACCEPTANCE_LINES[label])
