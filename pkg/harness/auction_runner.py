"""Drives one sealed-bid auction scenario block by block.

Each block the runner asks the contract which phase the next block falls
in and lets every principal act on what it can see: the public cursor,
the beacon and its own secrets.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from harness.checks import Check, Purse, conservation, expect
from harness.policies import BIDDER, Policy, get_policy
from harness.scenario import Scenario
from harness.traces import ObservationTrace, observe_auction
from services.auction import (
    AuctionContract,
    BidStatus,
    Outcome,
    Round,
    Variant,
    bat_children,
    bat_depth,
    brute_force_winner,
)
from services.costs import load_cost_model
from services.crypto import commitment
from services.errors import InvalidScenario
from services.proofs import ProofRegistry
from services.simchain import Chain, Identity, derive, rng_for
from services.state import LabSettings

logger = logging.getLogger(__name__)

CONTRACT = "auction"
GAS_ALLOWANCE = 1_000


@dataclass
class Bidder:
    index: int
    bid: int
    policy: Policy
    identity: Identity
    nonce: str
    h: bytes | None
    blamed: bool = False
    fake: int | None = None
    fake_round: int = 0
    done: set[tuple[Any, ...]] = field(default_factory=set)

    @property
    def owner(self) -> str:
        return self.identity.owner or self.identity.id

    def once(self, *key: Any) -> bool:
        """True the first time an action key is seen."""
        if key in self.done:
            return False
        self.done.add(key)
        return True


@dataclass
class AuctionRun:
    scenario: Scenario
    seed: int
    chain: Chain
    contract: AuctionContract
    registry: ProofRegistry
    bidders: list[Bidder]
    start: int
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def outcome(self) -> Outcome | None:
        return self.contract.outcome

    def calls_per_bidder(self) -> list[int]:
        counts: Counter[str] = Counter(tx.sender.owner for tx in self.chain.log if tx.call.contract == CONTRACT)
        return [counts[bidder.owner] for bidder in self.bidders]

    def gas_per_bidder(self) -> list[int]:
        """Gas paid by each bidder, pseudonyms included."""
        totals: Counter[str] = Counter()
        for tx in self.chain.log:
            if tx.call.contract == CONTRACT:
                totals[tx.sender.owner] += tx.gas
        return [totals[bidder.owner] for bidder in self.bidders]

    def blocks_used(self) -> int:
        end = self.outcome.block if self.outcome is not None else self.chain.height
        return end - self.start

    def trace_for(self, observer: str) -> ObservationTrace:
        identity = None
        if observer != "outside":
            index = int(observer.split(":")[-1])
            identity = self.bidders[index].identity
        return observe_auction(self.chain, CONTRACT, observer, identity)

    def summary(self) -> dict[str, Any]:
        calls = self.calls_per_bidder()
        outcome = self.outcome
        return {
            "winner": None if outcome is None else outcome.winner,
            "bid": None if outcome is None else outcome.bid,
            "rounds": len(self.contract.rounds),
            "restarts": self.contract.restarts(),
            "blocks_used": self.blocks_used(),
            "calls_per_bidder": calls,
            "penalties": [penalty.kind for penalty in self.contract.penalties],
        }

    def result_rows(self) -> list[dict[str, Any]]:
        calls = self.calls_per_bidder()
        outcome = self.outcome
        return [
            {
                "round": max(1, len(self.contract.rounds)),
                "blocks_used": self.blocks_used(),
                "calls_per_bidder": sum(calls) / len(calls) if calls else 0,
                "winner": "" if outcome is None or outcome.winner is None else outcome.winner,
                "max_bid": max(self.scenario.bids),
                "restarts": self.contract.restarts(),
            }
        ]


class AuctionRunner:
    def __init__(self, scenario: Scenario, settings: LabSettings, seed: int) -> None:
        self.scenario = scenario
        self.settings = settings
        self.seed = seed
        self.config = scenario.auction_config(settings.blocks_per_unit)
        costs = load_cost_model(Path(settings.auction_costs))
        missing = costs.covers(set(AuctionContract.functions))
        if missing:
            raise InvalidScenario(f"cost model has no entry for {sorted(missing)}")
        self.chain = Chain(seed, costs, settings.gas_policy, settings.gas_price, settings.blocks_per_unit)
        self.registry = ProofRegistry(label=f"auction:{seed}")
        self.contract = AuctionContract(self.registry)
        self.chain.add_contract(CONTRACT, self.contract)
        self.purse = Purse(self.chain)
        self.organizer = self.chain.create_identity(owner="organizer")
        self.spread = scenario.right_call_spread()
        self.bidders = [self._bidder(index, bid) for index, bid in enumerate(scenario.bids)]
        self.organizer_done: set[tuple[Any, ...]] = set()

    def _bidder(self, index: int, bid: int) -> Bidder:
        identity = self.chain.create_identity(owner=f"bidder:{index}")
        # nonces depend on the seed and position only, never on the bid
        nonce = derive(self.seed, "nonce", index).hex()
        h = None if self.config.variant is Variant.P0 else commitment(bid, nonce)
        policy = get_policy(self.scenario.policy_of(index), BIDDER)
        return Bidder(index, bid, policy, identity, nonce, h)

    @property
    def variant(self) -> Variant:
        return self.config.variant

    def block_limit(self) -> int:
        depth = max(1, bat_depth(self.config.m))
        per_round = depth + self.config.reveal_units + self.config.fake_units + 2
        return 8 + self.config.registration_units + self.config.m * per_round * (depth + 2) * len(self.bidders)

    def run(self) -> AuctionRun:
        logger.info("auction %s run %r with %d bidders (seed %d)",
                    self.variant.value, self.scenario.name, len(self.bidders), self.seed)
        self._deploy()
        start = self.contract.registration_end
        limit = self.chain.height + self.block_limit() * self.settings.blocks_per_unit
        finished = False
        while self.chain.height < limit:
            height = self.chain.height + 1
            phase = self.contract.phase_at(height)
            if phase == "refund":
                self._refund()
                self.chain.advance_block()
                finished = True
                break
            handler = getattr(self, f"_on_{phase}", None)
            if handler is not None:
                handler(height)
            self.chain.advance_block()
        if not finished:
            logger.error("auction did not conclude within %d blocks", limit)
        result = AuctionRun(self.scenario, self.seed, self.chain, self.contract, self.registry, self.bidders, start)
        result.checks = self.checks(result, finished)
        return result

    # registration

    def _deploy(self) -> None:
        gas = self.settings.gas_price * GAS_ALLOWANCE
        self.purse.fund(self.organizer, gas)
        calls = (self.config.r + self.spread + 1) * (bat_depth(self.config.m) + 1) * (self.config.m + 1)
        right_budget = (self.config.d_right + self.settings.gas_price) * calls
        for bidder in self.bidders:
            self.purse.fund(bidder.identity, self.config.d + right_budget + gas)
        tx = self.chain.submit(self.organizer, CONTRACT, "constructor", config=self.config)
        self.chain.advance_block()
        if not tx.accepted:
            raise InvalidScenario(f"deployment rejected: {tx.reason}")
        for bidder in self.bidders:
            self.chain.submit(bidder.identity, CONTRACT, "register", self.config.d, h=bidder.h)
        self.chain.advance_block()

    def _active(self) -> list[Bidder]:
        return [bidder for bidder in self.bidders if not self.contract.bidders[bidder.index].slashed]

    # P0 / P1

    def _on_countdown(self, height: int) -> None:
        value = self.config.m - self.contract.unit(height, self.contract.registration_end) + 1
        for bidder in self._active():
            if bidder.bid == value and bidder.policy.reveals and bidder.once("dutch"):
                n_b = bidder.nonce if self.variant is Variant.P1 else None
                self.chain.submit(bidder.identity, CONTRACT, "dutch_bid", n_b=n_b)

    # P2 / P3

    def _value(self, bidder: Bidder) -> int:
        rnd = self.contract.current_round()
        if self.variant is Variant.P3 and bidder.index in rnd.fake_selected:
            if bidder.fake_round != rnd.number:
                bidder.fake_round = rnd.number
                bidder.fake = self.contract.fake_assignment(bidder.index, bidder.nonce, rnd).fake_bid
            return max(bidder.bid, bidder.fake)
        return bidder.bid

    def _on_path(self, height: int) -> None:
        rnd = self.contract.current_round(height)
        cursor = self.contract.logical_cursor(height)
        if cursor.is_leaf or rnd.last_effective == (rnd.anchor, self.contract.unit(height, rnd.anchor)):
            return
        lo, hi = bat_children(cursor.x, cursor.y)[1]
        guides = [
            bidder
            for bidder in self._active()
            if bidder.policy.guides_path and not (bidder.blamed and not bidder.policy.reveals)
            and lo <= self._value(bidder) <= hi
        ]
        if guides:
            # the first in order calls; later ones see the pending call and hold back
            guide = guides[0]
            batch = self.config.r + rng_for(self.seed, "batch", height).randrange(self.spread + 1)
        else:
            spurious = [bidder for bidder in self._active() if bidder.policy.spurious_right and not bidder.blamed]
            if not spurious:
                return
            guide, batch = spurious[0], 1
        for _ in range(batch):
            self._right(guide, cursor.interval)

    def _right(self, bidder: Bidder, interval: tuple[int, int]) -> None:
        pseudonym = self.chain.create_identity(owner=bidder.owner, pseudonym=True)
        self.chain.transfer(bidder.identity, pseudonym, self.config.d_right + self.settings.gas_price)
        self.chain.submit(pseudonym, CONTRACT, "right", self.config.d_right, claimed=interval)

    def _on_reveal(self, height: int) -> None:
        rnd = self.contract.current_round(height)
        leaf = self.contract.logical_cursor(height).x
        for bidder in self._active():
            if not bidder.policy.reveals:
                continue
            if bidder.bid == leaf and rnd.winner is None and bidder.once("bid", rnd.number, rnd.anchor):
                self.chain.submit(bidder.identity, CONTRACT, "bid", n_b=bidder.nonce)
            if self._is_fake(bidder, rnd) and rnd.fake_claim is None:
                self._value(bidder)
                if bidder.fake == leaf and bidder.once("claim", rnd.number, rnd.anchor):
                    self._fakebid(bidder, rnd)

    def _on_fake_verification(self, height: int) -> None:
        rnd = self.contract.current_round(height)
        for bidder in self._active():
            if not bidder.policy.participates or not self._is_fake(bidder, rnd) or bidder.index in rnd.disclosed:
                continue
            self._value(bidder)
            if bidder.once("disclose", rnd.number):
                self._fakebid(bidder, rnd)

    def _is_fake(self, bidder: Bidder, rnd: Round) -> bool:
        return self.variant is Variant.P3 and bidder.index in rnd.fake_selected

    def _fakebid(self, bidder: Bidder, rnd: Round) -> None:
        proof = self.registry.prove_fake_bid(
            bidder.nonce, rnd.rho, rnd.m, bidder.fake, bid=bidder.bid, h=bidder.h
        )
        self.chain.submit(bidder.identity, CONTRACT, "fakebid", b_fake=bidder.fake, proof=proof)

    def _on_settle(self, height: int) -> None:
        rnd = self.contract.current_round(height)
        if ("settle", rnd.number) not in self.organizer_done:
            self.organizer_done.add(("settle", rnd.number))
            self.chain.submit(self.organizer, CONTRACT, "reset_or_refund")

    def _on_blame(self, height: int) -> None:
        rnd = self.contract.current_round(height)
        key = ("blame", rnd.number, rnd.anchor, rnd.blames)
        if key in self.organizer_done:
            return
        self.organizer_done.add(key)
        live = rnd.live_moves()
        if live:
            blamed = live[-1].caller.owner
            for bidder in self.bidders:
                if bidder.owner == blamed:
                    bidder.blamed = True
        self.chain.submit(self.organizer, CONTRACT, "blame")

    # refunds

    def _refund(self) -> None:
        outcome = self.contract.outcome
        for bidder in self._active():
            record = self.contract.bidders[bidder.index]
            if record.status is BidStatus.REFUNDED or not bidder.policy.participates:
                continue
            proof = None
            if not (self.variant is Variant.P0 or outcome is None or outcome.no_winner or outcome.winner == bidder.index):
                proof = self.registry.prove_less_than(bidder.bid, bidder.nonce, bidder.h, outcome.bid)
            self.chain.submit(bidder.identity, CONTRACT, "refund", proof=proof)

    # oracles

    def checks(self, run: AuctionRun, finished: bool) -> list[Check]:
        checks = [Check("terminated", finished, f"height {self.chain.height}"), conservation(self.chain)]
        outcome = self.contract.outcome
        revealing = [bidder for bidder in self.bidders if bidder.policy.reveals]
        if outcome is None:
            return checks
        if not revealing:
            checks.append(Check("no_winner", outcome.no_winner, f"winner {outcome.winner}"))
            return checks
        top, positions = brute_force_winner([bidder.bid for bidder in revealing])
        winners = {revealing[position - 1].index for position in positions}
        checks.append(expect("winning_bid", outcome.bid, top))
        checks.append(Check("winner", outcome.winner in winners, f"winner {outcome.winner}, expected one of {sorted(winners)}"))
        if self.variant.is_dutch and outcome.offset is not None:
            checks.append(expect("offset", outcome.offset, self.config.m - top + 1))
        calls = run.calls_per_bidder()
        if self.variant is Variant.P1:
            checks.append(Check("calls_bound", max(calls) <= 3, f"calls {calls}"))
        honest = all(bidder.policy.honest for bidder in self.bidders)
        if self.variant is Variant.P2 and honest:
            bound = 1 + (self.config.r + self.spread) * bat_depth(self.config.m) + 2
            checks.append(Check("calls_bound", max(calls) <= bound, f"calls {calls}, bound {bound}"))
        return checks


def run_auction(scenario: Scenario, settings: LabSettings, seed: int) -> AuctionRun:
    return AuctionRunner(scenario, settings, seed).run()
