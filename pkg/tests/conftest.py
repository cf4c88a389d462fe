import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class Acceptance:
    """Records one verdict per criterion; a failed check also fails the test."""

    def check(self, number: int, name: str, ok: bool, detail: str = "") -> None:
        ok = bool(ok)
        prev = _ACCEPTANCE.get(number)
        if prev is not None:
            ok = ok and prev[1]
            detail = "; ".join(d for d in (prev[2], detail) if d)
        _ACCEPTANCE[number] = (name, ok, detail)
        assert ok, f"criterion {number} ({name}) failed: {detail}"


@pytest.fixture
def acceptance():
    return Acceptance()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{number:2d}. {'PASS' if ok else 'FAIL'}  {name}  [{detail}]")
