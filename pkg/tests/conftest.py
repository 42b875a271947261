import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record():
    def _record(tag: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record
