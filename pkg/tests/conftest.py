import re

import numpy as np
import pytest

from ziptail import dgp

MASTER_SEED = 12345

_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(name: str, passed: bool, detail: str) -> None:
    """Remember an acceptance outcome for the end-of-run summary."""
    _ACCEPTANCE.append((name, bool(passed), detail))


def _order(item):
    m = re.match(r"C(\d+)", item[0])
    return (int(m.group(1)) if m else 99, item[0])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE, key=_order):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def pareto():
    return dgp.HeavyTailSpec(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(MASTER_SEED)
