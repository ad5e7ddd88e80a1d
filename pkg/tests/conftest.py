import pytest

_RESULTS = {}
N_CRITERIA = 10


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)``; the terminal summary prints one line each."""

    def record(criterion, passed, detail=""):
        _RESULTS[criterion] = (bool(passed), detail)
        print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in _RESULTS:
            ok, detail = _RESULTS[k]
            terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k:2d}: FAIL  (not run or errored before reporting)")
