from __future__ import annotations

import sys
from pathlib import Path

import pytest

from hiersoftmax.taxonomy import build_from_edges

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def fig1_tree():
    return build_from_edges([("R", "1"), ("R", "2"), ("1", "1.1"), ("1", "1.2"), ("2", "2.1")])


@pytest.fixture
def two_by_two():
    return build_from_edges([("root", "A"), ("root", "B"), ("A", "A1"), ("A", "A2"), ("B", "B1"), ("B", "B2")])


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion; they are repeated in the terminal summary."""

    def record(number: int, title: str, ok: bool | None, detail: str) -> bool | None:
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number} [{status}] {title}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
