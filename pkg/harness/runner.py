from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

from harness.auction_runner import CONTRACT as AUCTION_CONTRACT, AuctionRun, run_auction
from harness.checks import Check
from harness.report import Report, build_report
from harness.scenario import Scenario
from harness.voting_runner import CONTRACT as VOTING_CONTRACT, PROTOCOL_FUNCTIONS, VotingRun, run_voting
from services.state import LabSettings

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_INVALID = 2

ProtocolRun = Union[VotingRun, AuctionRun]


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    run: ProtocolRun
    report: Report

    @property
    def checks(self) -> list[Check]:
        return self.run.checks

    @property
    def failures(self) -> list[Check]:
        return [check for check in self.checks if not check.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.passed else EXIT_VIOLATION

    @property
    def state_hash(self) -> str:
        return self.run.chain.snapshot().state_hash()


def resolve_seed(scenario: Scenario, settings: LabSettings, seed: int | None = None) -> int:
    """CLI flag, then the scenario file, then settings (which already honor SEED)."""
    if seed is not None:
        return seed
    if scenario.seed is not None:
        return int(scenario.seed)
    return int(settings.seed)


def run(scenario: Scenario, settings: LabSettings, seed: int | None = None) -> RunResult:
    scenario.validate()
    seed = resolve_seed(scenario, settings, seed)
    if scenario.protocol == "blindvote":
        outcome: ProtocolRun = run_voting(scenario, settings, seed)
        report = build_report(
            outcome.chain, VOTING_CONTRACT, outcome.contract.penalties, PROTOCOL_FUNCTIONS, outcome.summary()
        )
    else:
        outcome = run_auction(scenario, settings, seed)
        report = build_report(outcome.chain, AUCTION_CONTRACT, outcome.contract.penalties, summary=outcome.summary())
    result = RunResult(scenario, seed, outcome, report)
    for check in result.failures:
        logger.warning("check %s failed: %s", check.name, check.detail)
    logger.info("%s finished at block %d: %s", scenario.name, outcome.chain.height,
                "pass" if result.passed else "violation")
    return result
