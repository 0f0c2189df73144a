"""Parameter sweeps for plot data.

Each point is an isolated run in a worker process; scenarios and settings
cross the process boundary as plain dictionaries.
"""
from __future__ import annotations

import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any

import numpy as np
import pandas as pd

from harness.runner import resolve_seed, run
from harness.scenario import Scenario, VoterSpec
from services.errors import InvalidScenario
from services.simchain import rng_for
from services.state import LabSettings

logger = logging.getLogger(__name__)

VOTING_COLUMNS = ["n", "total_gas", "protocol_gas", "optimized_protocol_gas"]
AUCTION_COLUMNS = ["n", "m", "blocks_used", "mean_calls", "max_calls", "total_gas", "max_bidder_gas", "restarts"]
_RANGE = re.compile(r"^\s*(\w+)\s*=\s*(\d+)\s*\.\.\s*(\d+)\s*$")


def parse_range(text: str, step: int = 1) -> tuple[str, list[int]]:
    """'n=10..1000' with a step gives ('n', [10, 20, ..., 1000])."""
    match = _RANGE.match(text)
    if match is None or step < 1:
        raise InvalidScenario(f"expected NAME=START..STOP with a positive step, got {text!r}")
    name, start, stop = match.group(1), int(match.group(2)), int(match.group(3))
    if start > stop:
        raise InvalidScenario(f"empty range {text!r}")
    return name, list(range(start, stop + 1, step))


def default_scenario(protocol: str = "blindvote") -> Scenario:
    if protocol == "blindvote":
        voters = [VoterSpec("v0", "yes"), VoterSpec("v1", "no")]
        return Scenario(protocol="blindvote", variant="onchain", name="sweep", voters=voters)
    return Scenario(protocol="auction", variant="P2", name="sweep", bids=[1])


def _voting_point(scenario_data: dict[str, Any], settings_data: dict[str, Any], n: int, seed: int) -> dict[str, Any]:
    settings = LabSettings.from_dict(settings_data)
    scenario = Scenario.from_dict(scenario_data).with_voters(n)
    onchain = run(replace(scenario, variant="onchain"), settings, seed)
    offchain = run(replace(scenario, variant="offchain"), settings, seed)
    return {
        "n": n,
        "total_gas": onchain.report.total_gas,
        "protocol_gas": onchain.report.protocol_gas,
        "optimized_protocol_gas": offchain.report.protocol_gas,
    }


def _auction_point(
    scenario_data: dict[str, Any], settings_data: dict[str, Any], param: str, value: int, seed: int
) -> dict[str, Any]:
    settings = LabSettings.from_dict(settings_data)
    scenario = Scenario.from_dict(scenario_data)
    config = dict(scenario.config)
    if param == "m":
        config["m"] = value
    scenario = replace(scenario, config=config)
    m = int(scenario.auction_option("m"))
    n = value if param == "n" else max(1, len(scenario.bids))
    rng = rng_for(seed, "sweep-bids", param, value)
    bids = [rng.randint(1, m) for _ in range(n)]
    result = run(scenario.with_bids(bids), settings, seed)
    calls = np.array(result.run.calls_per_bidder())
    return {
        "n": n,
        "m": m,
        "blocks_used": result.run.blocks_used(),
        "mean_calls": float(calls.mean()),
        "max_calls": int(calls.max()),
        "total_gas": result.report.total_gas,
        "max_bidder_gas": max(result.run.gas_per_bidder()),
        "restarts": result.run.contract.restarts(),
    }


def sweep(
    scenario: Scenario,
    settings: LabSettings,
    param: str,
    values: list[int],
    workers: int | None = None,
    seed: int | None = None,
) -> pd.DataFrame:
    seed = resolve_seed(scenario, settings, seed)
    workers = max(1, workers or settings.workers)
    if scenario.protocol == "blindvote":
        if param != "n":
            raise InvalidScenario(f"Blind Vote sweeps vary n, not {param!r}")
        columns = VOTING_COLUMNS
        jobs = [(_voting_point, (scenario.to_dict(), settings.to_dict(), value, seed)) for value in values]
    else:
        if param not in ("n", "m"):
            raise InvalidScenario(f"auction sweeps vary n or m, not {param!r}")
        columns = AUCTION_COLUMNS
        jobs = [(_auction_point, (scenario.to_dict(), settings.to_dict(), param, value, seed)) for value in values]
    logger.info("sweeping %s over %d values with %d workers", param, len(values), workers)
    if workers == 1:
        rows = [function(*args) for function, args in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(function, *args) for function, args in jobs]
            rows = [future.result() for future in futures]
    return pd.DataFrame.from_records(rows, columns=columns)
