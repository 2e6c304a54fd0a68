import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record a one-line pass/fail verdict; all verdicts are echoed after the run."""

    def record(criterion: str, passed: bool, detail: str = "") -> bool:
        line = f"{criterion}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        print(line)
        _VERDICTS.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
