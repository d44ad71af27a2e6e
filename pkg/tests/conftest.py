from contextlib import contextmanager

import pytest

# criterion number -> list of (passed, detail), filled by test_acceptance
_CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@contextmanager
def _track(number: int, detail: str):
    try:
        yield
    except BaseException as exc:
        _CRITERIA.setdefault(number, []).append((False, f"{detail}: {exc}".splitlines()[0]))
        raise
    _CRITERIA.setdefault(number, []).append((True, detail))


@pytest.fixture
def criterion():
    """``with criterion(n, "what"): ...`` records a pass or fail line for criterion n."""
    return _track


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        parts = _CRITERIA[number]
        ok = all(passed for passed, _ in parts)
        terminalreporter.write_line(f"AC{number} {'PASS' if ok else 'FAIL'}")
        for passed, detail in parts:
            terminalreporter.write_line(f"    [{'ok' if passed else 'x '}] {detail}")
