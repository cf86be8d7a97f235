import pytest

_VERDICTS: dict[int, tuple[bool, str]] = {}
_STARTED: set[int] = set()
N_CRITERIA = 10


@pytest.fixture
def verdict():
    """Record one acceptance verdict; the terminal summary prints them all."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _VERDICTS[number] = (bool(ok), detail)
        return ok

    return record


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        _STARTED.add(mark.args[0])


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _STARTED:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in _VERDICTS:
            ok, detail = _VERDICTS[n]
            tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        elif n in _STARTED:
            tr.write_line(f"criterion {n:2d}: FAIL  (error before a verdict was recorded)")
