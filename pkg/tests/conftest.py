import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one pass/fail line per acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(_LINES, [])

    def check(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
