import pytest

# criterion number -> (passed, detail), filled by the acceptance module
ACCEPTANCE_RESULTS: dict = {}


def record_criterion(number: int, passed: bool, detail: str):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_RESULTS[number] = (passed, line)
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[n][1])


@pytest.fixture
def criterion():
    return record_criterion
