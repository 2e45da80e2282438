import pytest

_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: ``acceptance(n, ok, detail)``; also asserts ``ok``."""
    lines = request.config.stash.setdefault(_KEY, {})

    def record(n: int, ok: bool, detail: str = ""):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, {})
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
