import pytest

# filled by tests/test_acceptance.py: (criterion, passed, detail)
ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    def _record(criterion: str, passed: bool, detail: str):
        line = (criterion, bool(passed), detail)
        ACCEPTANCE_LINES.append(line)
        print(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE_LINES, key=lambda r: int(r[0].split()[1])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}")
