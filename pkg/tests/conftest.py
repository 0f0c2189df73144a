from __future__ import annotations

from pathlib import Path

import pytest

from harness.scenario import Scenario, load_scenario
from services.costs import load_cost_model
from services.simchain import Chain
from services.state import LabSettings

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture
def settings() -> LabSettings:
    return LabSettings(seed=0)


@pytest.fixture
def scenario():
    def _load(name: str) -> Scenario:
        return load_scenario(SCENARIOS / f"{name}.json")

    return _load


@pytest.fixture
def voting_chain(settings: LabSettings) -> Chain:
    return Chain(1, load_cost_model(Path(settings.blindvote_costs)))


@pytest.fixture
def auction_chain(settings: LabSettings) -> Chain:
    return Chain(1, load_cost_model(Path(settings.auction_costs)))
