"""Observational-determinism check over two compatible bid sequences.

Both runs share the seed, so beacon outputs, nonces and harness streams are
identical; only the bids differ. The verdict compares the observer's
canonical projection, and with `own_actions` also what the observer itself
submitted.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from harness.auction_runner import run_auction
from harness.voting_runner import run_voting
from harness.runner import resolve_seed
from harness.scenario import Scenario
from harness.traces import ObservationTrace, first_divergence
from services.auction import brute_force_winner
from services.errors import IncompatibleSequences, InvalidScenario
from services.state import LabSettings

logger = logging.getLogger(__name__)

OUTSIDE = "outside"


@dataclass(frozen=True)
class CompatibilityCheck:
    bids_a: tuple[int, ...]
    bids_b: tuple[int, ...]
    compatible: bool


@dataclass
class OdVerdict:
    observer: str
    equal: bool
    own_actions: bool
    trace_a: ObservationTrace
    trace_b: ObservationTrace
    divergence: tuple | None = None

    def describe(self) -> str:
        if self.equal:
            return f"observer {self.observer}: traces equal ({len(self.trace_a.events)} events)"
        position, left, right = self.divergence
        return f"observer {self.observer}: traces differ at event {position}: {left} != {right}"


def compatible(bids_a: Sequence[int], bids_b: Sequence[int]) -> CompatibilityCheck:
    """Same length, same maximum, same set of maximizers."""
    ok = len(bids_a) == len(bids_b) and bool(bids_a) and brute_force_winner(bids_a) == brute_force_winner(bids_b)
    return CompatibilityCheck(tuple(bids_a), tuple(bids_b), ok)


def parse_observer(observer: str | int, n: int) -> str:
    text = str(observer).strip().lower()
    if text == OUTSIDE:
        return OUTSIDE
    try:
        index = int(text.split(":")[-1])
    except ValueError:
        raise InvalidScenario(f"observer must be 'outside', 'bidder:<i>' or an index, got {observer!r}") from None
    if not 0 <= index < n:
        raise InvalidScenario(f"observer index {index} outside 0..{n - 1}")
    return f"bidder:{index}"


def check_observational_determinism(
    scenario: Scenario,
    bids_a: Sequence[int],
    bids_b: Sequence[int],
    observer: str | int,
    settings: LabSettings,
    seed: int | None = None,
    own_actions: bool = False,
) -> OdVerdict:
    if scenario.protocol != "auction":
        raise InvalidScenario("observational determinism is defined for auctions")
    check = compatible(bids_a, bids_b)
    if not check.compatible:
        raise IncompatibleSequences(f"{list(bids_a)} and {list(bids_b)} differ in max or argmax")
    observer = parse_observer(observer, len(bids_a))
    if observer != OUTSIDE:
        index = int(observer.split(":")[1])
        if bids_a[index] != bids_b[index]:
            raise IncompatibleSequences(f"observer {observer} bids {bids_a[index]} and {bids_b[index]}")
    scenario_a, scenario_b = scenario.with_bids(list(bids_a)), scenario.with_bids(list(bids_b))
    scenario_a.validate()
    scenario_b.validate()
    seed = resolve_seed(scenario, settings, seed)
    trace_a = run_auction(scenario_a, settings, seed).trace_for(observer)
    trace_b = run_auction(scenario_b, settings, seed).trace_for(observer)
    left, right = trace_a.canonical(), trace_b.canonical()
    if own_actions:
        left += [("own", *row) for row in trace_a.canonical_own()]
        right += [("own", *row) for row in trace_b.canonical_own()]
    divergence = first_divergence(left, right)
    verdict = OdVerdict(observer, divergence is None, own_actions, trace_a, trace_b, divergence)
    logger.info(verdict.describe())
    return verdict


def check_vote_secrecy(
    scenario: Scenario,
    votes_b: Sequence[str],
    settings: LabSettings,
    seed: int | None = None,
) -> OdVerdict:
    """Reassign the same multiset of votes and compare the outside projection."""
    if scenario.protocol != "blindvote":
        raise InvalidScenario("vote secrecy is defined for Blind Vote")
    votes_a = [voter.vote for voter in scenario.voters]
    if sorted(votes_a) != sorted(votes_b):
        raise IncompatibleSequences("vote assignments must be permutations of each other")
    scenario.validate()
    permuted = scenario.with_votes(list(votes_b))
    seed = resolve_seed(scenario, settings, seed)
    trace_a = run_voting(scenario, settings, seed).trace
    trace_b = run_voting(permuted, settings, seed).trace
    divergence = first_divergence(trace_a.canonical(), trace_b.canonical())
    verdict = OdVerdict(OUTSIDE, divergence is None, False, trace_a, trace_b, divergence)
    logger.info(verdict.describe())
    return verdict
