import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sbdropout.tensor import RngState  # noqa: E402


@pytest.fixture
def rng():
    return RngState(1234)


# acceptance outcomes, filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[str, str] = {}


def record_criterion(key: str, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] {key} {title}: {detail}"
    ACCEPTANCE_LINES[key] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
