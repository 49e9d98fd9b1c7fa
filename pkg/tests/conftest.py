import pytest

from elastoplast import MONITOR


class AcceptanceLog:
    """Collects one verdict line per acceptance criterion."""

    def __init__(self):
        self.lines = {}

    def record(self, n: int, ok: bool, detail: str) -> str:
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        self.lines[n] = line
        print(line)
        return line


LOG_KEY = pytest.StashKey[AcceptanceLog]()


def pytest_configure(config):
    config.stash[LOG_KEY] = AcceptanceLog()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash[LOG_KEY]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(LOG_KEY, None)
    if log is None or not log.lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(log.lines):
        terminalreporter.write_line(log.lines[n])
    terminalreporter.write_line(
        f"constraint monitor over the whole session: {MONITOR.steps} steps, max |z| - 1 = {MONITOR.max_excess!r}")
