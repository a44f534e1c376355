import pytest

_RESULTS = {}


@pytest.fixture
def criterion():
    """``criterion(n, title, ok, detail)`` records one acceptance line and returns ``ok``."""
    def record(n, title, ok, detail=""):
        prev = _RESULTS.get(n)
        ok = bool(ok) and (prev is None or prev[1])
        _RESULTS[n] = (title, ok, detail if prev is None or not detail else f"{prev[2]}; {detail}".strip("; "))
        print(f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {title} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
