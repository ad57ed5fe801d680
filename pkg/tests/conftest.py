import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line, print it, and fail the test if it did not pass."""
    lines = request.config.acceptance_lines

    def record(number, title, checks, detail=""):
        ok = all(passed for _, passed in checks)
        failed = [name for name, passed in checks if not passed]
        line = f"criterion {number:>2}  {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        if failed:
            line += f"  failed: {', '.join(failed)}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
