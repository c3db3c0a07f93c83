import pytest

_LOG = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """``report(number, passed, detail)`` prints one line and keeps it for the session summary."""
    log = request.config.stash.setdefault(_LOG, [])

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        log.append((number, line))
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_LOG, [])
    if log:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(log):
            terminalreporter.write_line(line)
