import pytest

_lines_key = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_lines_key] = []


@pytest.fixture
def criterion(request):
    """``criterion(number, title, ok, detail)`` records and asserts one acceptance line."""

    def report(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        print(line)
        request.config.stash[_lines_key].append((number, line))
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_lines_key, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
