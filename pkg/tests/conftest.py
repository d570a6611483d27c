import pytest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance outcome and print its status line."""

    def record(number: int, name: str, ok: bool, detail: str = ""):
        _CRITERIA[number] = (name, bool(ok), detail)
        print(_line(number, name, ok, detail))
        return ok

    return record


def _line(number, name, ok, detail):
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_line(number, *_CRITERIA[number]))
