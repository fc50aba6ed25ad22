from __future__ import annotations

import pytest

from daa_alloc.waitmap import build_map

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def default_map():
    return build_map()


@pytest.fixture(scope="session")
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
