from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion.

    Lines are echoed immediately (visible with ``-s``) and repeated in the
    terminal summary so a plain ``pytest -v`` run shows them too.
    """

    def record(criterion: str, status: bool | str, detail: str = "") -> None:
        word = status if isinstance(status, str) else ("PASS" if status else "FAIL")
        line = f"{word} {criterion}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
