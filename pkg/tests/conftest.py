import pytest

from crowdobs import _backend


@pytest.fixture(params=_backend.available())
def backend(request):
    """Each available kernel module in turn."""
    return _backend.get(request.param)


@pytest.fixture
def python_core():
    return _backend.get("python")


VERDICTS = []


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL for an acceptance criterion, then assert it."""

    def _record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS.append(line)
        print(line)
        assert ok, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
