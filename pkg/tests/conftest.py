from __future__ import annotations

from pathlib import Path

import pytest

from triage_sim.workload import Workload, parse_workload

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def bell4() -> Workload:
    return parse_workload((FIXTURES / "bell4.lli").read_text())


@pytest.fixture(scope="session")
def msd15to1() -> Workload:
    return parse_workload((FIXTURES / "msd15to1.lli").read_text())
