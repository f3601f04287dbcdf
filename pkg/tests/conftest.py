import pytest

_verdicts: list[tuple[str, bool, str]] = []


class Verdicts:
    """Collects one line per acceptance criterion; the line is printed even when the check fails."""

    def check(self, name: str, ok: bool, detail: str) -> None:
        _verdicts.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"


@pytest.fixture
def verdict():
    return Verdicts()


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _verdicts:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
