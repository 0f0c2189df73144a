"""Sealed-bid auction family.

One contract, four variants:

- P0: Dutch countdown, registration without commitment.
- P1: Dutch countdown over committed bids.
- P2: binary auction tree (BAT) walk with pseudonymous right() calls,
  blame and rollback.
- P3: P2 plus beacon-selected fake bidders and round resets.

Interval and cursor rules follow the BAT: the root is [1, m], the left child
of [x, y] is [x, (x+y)//2] and the right child is [(x+y)//2 + 1, y]. Left
moves are implicit and happen lazily on the next state-changing call.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Sequence

from services.crypto import commitment
from services.errors import (
    AlreadyRefunded,
    AtLeaf,
    BadConfig,
    BadProof,
    Concluded,
    DuplicateIdentity,
    HashMismatch,
    Leaf,
    NoLeafYet,
    NotEligible,
    NotFakeBidder,
    NothingToBlame,
    NotRegistered,
    OverLeafWithoutCalls,
    Reuse,
    StaleInterval,
    TooFewBidders,
    WindowClosed,
    WrongDeposit,
    WrongVariant,
)
from services.proofs import FakeBidCorrect, LessThan, ProofRegistry, ProofToken, compute_fake_bid
from services.simchain import CallContext, Contract, Identity

logger = logging.getLogger(__name__)

__all__ = [
    "AuctionConfig",
    "AuctionContract",
    "BatCursor",
    "BidRecord",
    "FakeAssignment",
    "Outcome",
    "RightMove",
    "Variant",
    "bat_children",
    "bat_depth",
    "brute_force_winner",
    "compute_fake_bid",
    "select_fake_bidders",
]


class Variant(str, Enum):
    P0 = "P0"
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"

    @property
    def is_dutch(self) -> bool:
        return self in (Variant.P0, Variant.P1)


class BidStatus(str, Enum):
    ACTIVE = "active"
    WINNER = "winner"
    REFUNDED = "refunded"
    SLASHED = "slashed"


@dataclass(frozen=True)
class AuctionConfig:
    m: int
    d: int
    d_right: int = 0
    r: int = 1
    f_fake: int = 0
    variant: Variant = Variant.P2
    reward_right: int = 0
    registration_units: int = 1
    reveal_units: int = 1
    fake_units: int = 1
    blocks_per_unit: int = 1

    def validate(self) -> None:
        if self.m < 1:
            raise BadConfig(f"m must be at least 1, got {self.m}")
        if self.r < 1:
            raise BadConfig(f"r must be at least 1, got {self.r}")
        if self.f_fake < 0:
            raise BadConfig("f_fake must be non-negative")
        if self.variant is Variant.P3 and self.f_fake <= 1:
            raise BadConfig("P3 needs more than one fake bidder")
        if min(self.d, self.d_right, self.reward_right) < 0:
            raise BadConfig("deposits and rewards must be non-negative")
        if min(self.registration_units, self.reveal_units, self.fake_units, self.blocks_per_unit) < 1:
            raise BadConfig("every window needs at least one unit")


@dataclass
class BidRecord:
    pk: Identity
    index: int
    h: bytes | None
    held: int
    status: BidStatus = BidStatus.ACTIVE

    @property
    def slashed(self) -> bool:
        return self.status is BidStatus.SLASHED


@dataclass
class BatCursor:
    x: int
    y: int
    step: int = 0

    @classmethod
    def root(cls, m: int) -> "BatCursor":
        return cls(1, m, 0)

    @property
    def interval(self) -> tuple[int, int]:
        return self.x, self.y

    @property
    def is_leaf(self) -> bool:
        return self.x == self.y

    def left(self) -> None:
        self.y = (self.x + self.y) // 2
        self.step += 1

    def right(self) -> None:
        self.x = (self.x + self.y) // 2 + 1
        self.step += 1

    def catch_up(self, t: int) -> None:
        """Implicit left steps owed before a move in unit t."""
        while self.step < t - 1 and not self.is_leaf:
            self.left()

    def descend_to_leaf(self) -> int:
        while not self.is_leaf:
            self.left()
        return self.x

    def copy(self) -> "BatCursor":
        return replace(self)


@dataclass
class RightMove:
    block: int
    key: tuple[int, int]
    caller: Identity
    deposit: int
    effective: bool
    after: BatCursor | None = None
    blamed: bool = False


@dataclass(frozen=True)
class FakeAssignment:
    index: int
    fake_bid: int
    rho: bytes


@dataclass(frozen=True)
class Outcome:
    winner: int | None
    bid: int | None
    block: int
    rounds: int = 1
    offset: int | None = None

    @property
    def no_winner(self) -> bool:
        return self.winner is None


@dataclass
class Round:
    number: int
    m: int
    anchor: int
    rho: bytes | None = None
    fake_selected: tuple[int, ...] = ()
    cursor: BatCursor = field(default_factory=lambda: BatCursor(1, 1))
    moves: list[RightMove] = field(default_factory=list)
    callers: dict[tuple[int, int], list[Identity]] = field(default_factory=dict)
    last_effective: tuple[int, int] | None = None
    winner: int | None = None
    fake_claim: tuple[int, int] | None = None
    disclosed: dict[int, int] = field(default_factory=dict)
    blames: int = 0

    @property
    def depth(self) -> int:
        return bat_depth(self.m)

    @property
    def resolved(self) -> bool:
        return self.winner is not None or self.fake_claim is not None

    def live_moves(self) -> list[RightMove]:
        return [move for move in self.moves if move.effective and not move.blamed]


def bat_depth(m: int) -> int:
    """ceil(log2 m); depth of the tree over [1, m]."""
    return (m - 1).bit_length()


def bat_children(x: int, y: int) -> tuple[tuple[int, int], tuple[int, int]]:
    if x > y:
        raise ValueError(f"empty interval [{x}, {y}]")
    if x == y:
        raise Leaf(f"[{x}, {y}] is a leaf")
    mid = (x + y) // 2
    return (x, mid), (mid + 1, y)


def brute_force_winner(bids: Sequence[int]) -> tuple[int, set[int]]:
    """Maximum bid and its 1-based argmax positions."""
    if not bids:
        raise ValueError("no bids")
    top = max(bids)
    return top, {position for position, bid in enumerate(bids, start=1) if bid == top}


def select_fake_bidders(rho: bytes, f_fake: int, n: int) -> tuple[int, ...]:
    """Distinct indices by rejection sampling on hash(rho || counter) mod n."""
    if f_fake > n:
        raise TooFewBidders(f"{f_fake} fake bidders requested from {n}")
    chosen: list[int] = []
    counter = 0
    while len(chosen) < f_fake:
        draw = hashlib.sha256(rho + counter.to_bytes(8, "big")).digest()
        index = int.from_bytes(draw, "big") % n
        if index not in chosen:
            chosen.append(index)
        counter += 1
    return tuple(sorted(chosen))


class AuctionContract(Contract):
    functions = frozenset(
        {
            "constructor",
            "register",
            "dutch_bid",
            "right",
            "bid",
            "blame",
            "fakebid",
            "reset_or_refund",
            "refund",
        }
    )

    def __init__(self, registry: ProofRegistry | None = None) -> None:
        super().__init__()
        self.registry = registry or ProofRegistry()
        self.config: AuctionConfig | None = None
        self.organizer: Identity | None = None
        self.chain: Any = None
        self.deploy_height = 0
        self.bidders: list[BidRecord] = []
        self.by_id: dict[str, int] = {}
        self.round: Round | None = None
        self.rounds: list[Round] = []
        self.outcome: Outcome | None = None

    # timing

    @property
    def bpu(self) -> int:
        return self.config.blocks_per_unit

    @property
    def registration_end(self) -> int:
        return self.deploy_height + self.config.registration_units * self.bpu

    @property
    def countdown_end(self) -> int:
        return self.registration_end + self.config.m * self.bpu

    def unit(self, height: int, anchor: int) -> int:
        return (height - anchor - 1) // self.bpu + 1

    def path_end(self, rnd: Round) -> int:
        return rnd.anchor + rnd.depth * self.bpu

    def reveal_end(self, rnd: Round) -> int:
        return self.path_end(rnd) + self.config.reveal_units * self.bpu

    def fake_end(self, rnd: Round) -> int:
        return self.reveal_end(rnd) + self.config.fake_units * self.bpu

    def phase_at(self, height: int) -> str:
        if self.config is None:
            return "undeployed"
        if self.outcome is not None:
            return "refund"
        if height <= self.registration_end:
            return "registration"
        if self.config.variant.is_dutch:
            return "countdown" if height <= self.countdown_end else "refund"
        rnd = self.current_round(height)
        if height <= self.path_end(rnd):
            return "path"
        if height <= self.reveal_end(rnd):
            return "reveal"
        if self.config.variant is Variant.P3 and rnd.resolved:
            return "fake_verification" if height <= self.fake_end(rnd) else "settle"
        return "blame"

    # views for principals

    def current_round(self, height: int | None = None) -> Round:
        """The active round; until a tree call stores the first one it is derived afresh."""
        if self.round is not None:
            return self.round
        if height is not None and height <= self.registration_end:
            raise WindowClosed("registration is still open")
        return self._new_round(1, self.config.m, self.registration_end)

    def logical_cursor(self, height: int) -> BatCursor:
        rnd = self.current_round(height)
        cursor = rnd.cursor.copy()
        if height > self.path_end(rnd):
            cursor.descend_to_leaf()
        elif rnd.last_effective != (rnd.anchor, self.unit(height, rnd.anchor)):
            cursor.catch_up(self.unit(height, rnd.anchor))
        return cursor

    def index_of(self, identity: Identity) -> int | None:
        return self.by_id.get(identity.id)

    # Step 0 / 1

    def constructor(self, ctx: CallContext, config: AuctionConfig) -> None:
        if self.config is not None:
            raise BadConfig("already deployed")
        config.validate()
        self.config = config
        self.organizer = ctx.sender
        self.chain = ctx.chain
        self.deploy_height = ctx.height
        logger.info("auction %s deployed at block %d (m=%d)", config.variant.value, ctx.height, config.m)

    def register(self, ctx: CallContext, h: bytes | None = None) -> None:
        self._require_deployed()
        if not self.deploy_height < ctx.height <= self.registration_end:
            raise WindowClosed(f"registration closed at block {self.registration_end}")
        if ctx.value != self.config.d:
            raise WrongDeposit(f"deposit is {self.config.d}, got {ctx.value}")
        if ctx.sender.id in self.by_id:
            raise DuplicateIdentity(ctx.sender.id)
        if self.config.variant is not Variant.P0 and not isinstance(h, bytes):
            raise WrongVariant(f"{self.config.variant.value} registration needs a commitment")
        index = len(self.bidders)
        self.bidders.append(BidRecord(pk=ctx.sender, index=index, h=h, held=ctx.value))
        self.by_id[ctx.sender.id] = index

    # P0 / P1 countdown

    def dutch_bid(self, ctx: CallContext, n_b: bytes | str | int | None = None) -> None:
        self._require_deployed()
        if not self.config.variant.is_dutch:
            raise WrongVariant("dutch_bid is only defined for P0 and P1")
        if self.outcome is not None:
            raise Concluded("auction already has a winner")
        if not self.registration_end < ctx.height <= self.countdown_end:
            raise WindowClosed(f"countdown runs until block {self.countdown_end}")
        record = self._active_record(ctx.sender)
        offset = self.unit(ctx.height, self.registration_end)
        value = self.config.m - offset + 1
        if self.config.variant is Variant.P1 and (n_b is None or commitment(value, n_b) != record.h):
            self._slash(ctx, record, "hash_mismatch")
            raise HashMismatch(f"bid does not open to {value}")
        record.status = BidStatus.WINNER
        self.outcome = Outcome(winner=record.index, bid=value, block=ctx.height, offset=offset)
        logger.info("dutch winner %d with bid %d at offset %d", record.index, value, offset)

    # P2 / P3 path finding

    def right(self, ctx: CallContext, claimed: Sequence[int]) -> None:
        rnd = self._tree_round(ctx)
        if not rnd.anchor < ctx.height <= self.path_end(rnd):
            raise WindowClosed(f"path finding runs until block {self.path_end(rnd)}")
        if ctx.value != self.config.d_right:
            raise WrongDeposit(f"right() needs {self.config.d_right}, got {ctx.value}")
        t = self.unit(ctx.height, rnd.anchor)
        key = (rnd.anchor, t)
        if rnd.last_effective == key:
            self._remember_caller(rnd, key, ctx.sender)
            ctx.pay(ctx.sender, ctx.value)
            rnd.moves.append(RightMove(ctx.height, key, ctx.sender, 0, effective=False))
            logger.debug("repeated right() in block %d ignored", ctx.height)
            return
        cursor = rnd.cursor.copy()
        cursor.catch_up(t)
        if cursor.is_leaf:
            raise AtLeaf(f"cursor already at leaf {cursor.x}")
        if tuple(claimed) != cursor.interval:
            raise StaleInterval(f"claimed {tuple(claimed)}, cursor at {cursor.interval}")
        cursor.right()
        rnd.cursor = cursor
        rnd.last_effective = key
        rnd.moves.append(RightMove(ctx.height, key, ctx.sender, ctx.value, effective=True, after=cursor.copy()))
        self._remember_caller(rnd, key, ctx.sender)
        logger.debug("right() at block %d moved to %s", ctx.height, cursor.interval)

    def bid(self, ctx: CallContext, n_b: bytes | str | int) -> None:
        rnd = self._tree_round(ctx)
        if rnd.winner is not None:
            raise Concluded("winner already revealed")
        if ctx.height <= self.path_end(rnd):
            raise NoLeafYet(f"path finding runs until block {self.path_end(rnd)}")
        if ctx.height > self.reveal_end(rnd):
            raise WindowClosed(f"reveal closed at block {self.reveal_end(rnd)}")
        record = self._active_record(ctx.sender)
        leaf = rnd.cursor.copy().descend_to_leaf()
        if commitment(leaf, n_b) != record.h:
            raise HashMismatch(f"commitment does not open to leaf {leaf}")
        rnd.cursor.descend_to_leaf()
        rnd.winner = record.index
        logger.info("bidder %d revealed the leaf %d", record.index, leaf)
        if self.config.variant is Variant.P2:
            record.status = BidStatus.WINNER
            self._settle_round(ctx, rnd)
            self._conclude(ctx, record.index, leaf)

    def blame(self, ctx: CallContext) -> None:
        rnd = self._tree_round(ctx)
        if rnd.resolved:
            raise NothingToBlame("the leaf was claimed")
        if ctx.height <= self.reveal_end(rnd):
            raise WindowClosed(f"reveal runs until block {self.reveal_end(rnd)}")
        live = rnd.live_moves()
        if not live:
            logger.info("no right() mover to blame; auction ends without a winner")
            self._settle_round(ctx, rnd)
            self._conclude(ctx, None, None)
            return
        last = live[-1]
        last.blamed = True
        ctx.burn(last.deposit)
        self.record_penalty(ctx, last.caller, "blamed_right", last.deposit)
        rnd.cursor = live[-2].after.copy() if len(live) > 1 else BatCursor.root(rnd.m)
        rnd.anchor = ctx.height - rnd.cursor.step * self.bpu
        rnd.last_effective = None
        rnd.blames += 1
        logger.warning(
            "blamed %s for the empty leaf; rewound to %s, path resumes at block %d",
            last.caller.id,
            rnd.cursor.interval,
            ctx.height + 1,
        )

    # P3 fake bids

    def fakebid(self, ctx: CallContext, b_fake: int, proof: ProofToken | None = None) -> None:
        rnd = self._tree_round(ctx)
        if self.config.variant is not Variant.P3:
            raise WrongVariant("fake bids are only defined for P3")
        record = self._active_record(ctx.sender)
        if record.index not in rnd.fake_selected:
            raise NotFakeBidder(ctx.sender.id)
        if ctx.height <= self.path_end(rnd):
            raise NoLeafYet(f"path finding runs until block {self.path_end(rnd)}")
        if record.index in rnd.disclosed:
            raise Reuse(f"bidder {record.index} already disclosed")
        leaf = rnd.cursor.copy().descend_to_leaf()
        valid = self._fake_proof_ok(rnd, record, b_fake, proof)
        if ctx.height <= self.reveal_end(rnd):
            if not valid or b_fake != leaf:
                raise BadProof(f"fake claim of {b_fake} at leaf {leaf} not proven")
            rnd.cursor.descend_to_leaf()
            rnd.disclosed[record.index] = b_fake
            if rnd.fake_claim is None:
                rnd.fake_claim = (record.index, b_fake)
            return
        if not rnd.resolved or ctx.height > self.fake_end(rnd):
            raise WindowClosed("fake bid verification is not open")
        if not valid:
            self._slash(ctx, record, "bad_fake_proof")
            raise BadProof(f"fake bid {b_fake} not proven")
        if b_fake > leaf:
            self._slash(ctx, record, "fake_over_leaf")
            raise OverLeafWithoutCalls(f"fake bid {b_fake} exceeds leaf {leaf}")
        rnd.disclosed[record.index] = b_fake

    def reset_or_refund(self, ctx: CallContext) -> None:
        rnd = self._tree_round(ctx)
        if self.config.variant is not Variant.P3:
            raise WrongVariant("reset_or_refund is only defined for P3")
        if ctx.height <= self.fake_end(rnd):
            raise WindowClosed(f"fake bid verification runs until block {self.fake_end(rnd)}")
        if not rnd.resolved:
            raise NoLeafYet("no bid or fake claim for this leaf; use blame")
        for index in rnd.fake_selected:
            record = self.bidders[index]
            if not record.slashed and index not in rnd.disclosed:
                self._slash(ctx, record, "silent_fake")
        self._settle_round(ctx, rnd)
        leaf = rnd.cursor.x
        if rnd.winner is not None:
            winner = self.bidders[rnd.winner]
            if not winner.slashed:
                winner.status = BidStatus.WINNER
            self._conclude(ctx, rnd.winner, leaf)
            return
        new_m = rnd.fake_claim[1] - 1
        if new_m < 1:
            logger.info("fake bid of 1 reached; auction ends without a winner")
            self._conclude(ctx, None, None)
            return
        logger.info("round %d ended at fake bid %d; restarting with m=%d", rnd.number, leaf, new_m)
        self._open_round(rnd.number + 1, new_m, ctx.height)

    # refund

    def refund(self, ctx: CallContext, proof: ProofToken | None = None) -> None:
        self._require_deployed()
        if self.outcome is None and self.config.variant.is_dutch and ctx.height > self.countdown_end:
            self._conclude(ctx, None, None)
        if self.outcome is None:
            raise WindowClosed("auction not resolved")
        index = self.by_id.get(ctx.sender.id)
        if index is None:
            raise NotRegistered(ctx.sender.id)
        record = self.bidders[index]
        if record.slashed:
            raise NotEligible(f"bidder {index} was slashed")
        if record.status is BidStatus.REFUNDED:
            raise AlreadyRefunded(ctx.sender.id)
        needs_proof = not (
            self.config.variant is Variant.P0 or self.outcome.no_winner or index == self.outcome.winner
        )
        if needs_proof and not self._less_than_ok(record, proof):
            self._slash(ctx, record, "bad_refund_proof")
            raise BadProof(f"bidder {index} did not prove a losing bid")
        amount, record.held = record.held, 0
        record.status = BidStatus.REFUNDED
        ctx.pay(ctx.sender, amount)

    # helpers

    def _require_deployed(self) -> None:
        if self.config is None:
            raise BadConfig("contract not deployed")

    def _tree_round(self, ctx: CallContext) -> Round:
        self._require_deployed()
        if self.config.variant.is_dutch:
            raise WrongVariant("tree functions are only defined for P2 and P3")
        if self.outcome is not None:
            raise Concluded("auction concluded")
        if ctx.height <= self.registration_end:
            raise WindowClosed("registration is still open")
        if self.round is None:
            self._open_round(1, self.config.m, self.registration_end)
        return self.round

    def _active_record(self, identity: Identity) -> BidRecord:
        index = self.by_id.get(identity.id)
        if index is None:
            raise NotRegistered(identity.id)
        record = self.bidders[index]
        if record.slashed:
            raise NotEligible(f"bidder {index} was slashed")
        return record

    def _active_indices(self) -> list[int]:
        return [record.index for record in self.bidders if not record.slashed]

    def _open_round(self, number: int, m: int, anchor: int) -> None:
        rnd = self._new_round(number, m, anchor)
        self.round = rnd
        self.rounds.append(rnd)

    def _new_round(self, number: int, m: int, anchor: int) -> Round:
        rnd = Round(number=number, m=m, anchor=anchor, cursor=BatCursor.root(m))
        if self.config.variant is Variant.P3:
            rnd.rho = self.chain.beacon_output(anchor)
            active = self._active_indices()
            wanted = self.config.f_fake
            if number > 1 and wanted > len(active):
                logger.warning("only %d bidders left for %d fake slots", len(active), wanted)
                wanted = len(active)
            picks = select_fake_bidders(rnd.rho, wanted, len(active))
            rnd.fake_selected = tuple(sorted(active[pick] for pick in picks))
        return rnd

    def _remember_caller(self, rnd: Round, key: tuple[int, int], caller: Identity) -> None:
        callers = rnd.callers.setdefault(key, [])
        if len(callers) < self.config.r:
            callers.append(caller)

    def _fake_proof_ok(self, rnd: Round, record: BidRecord, b_fake: int, proof: Any) -> bool:
        if not isinstance(proof, ProofToken) or not isinstance(proof.statement, FakeBidCorrect):
            return False
        statement = proof.statement
        if (statement.rho, statement.m, statement.claimed, statement.commitment) != (rnd.rho, rnd.m, b_fake, record.h):
            return False
        return self.registry.accepts(proof)

    def _less_than_ok(self, record: BidRecord, proof: Any) -> bool:
        if not isinstance(proof, ProofToken) or not isinstance(proof.statement, LessThan):
            return False
        if proof.statement != LessThan(commitment=record.h, bound=self.outcome.bid):
            return False
        return self.registry.accepts(proof)

    def _slash(self, ctx: CallContext, record: BidRecord, kind: str) -> None:
        amount, record.held = record.held, 0
        record.status = BidStatus.SLASHED
        ctx.burn(amount)
        self.record_penalty(ctx, record.pk, kind, amount)
        logger.warning("bidder %d slashed %d: %s", record.index, amount, kind)

    def _settle_round(self, ctx: CallContext, rnd: Round) -> None:
        """Return live right() deposits and pay rewards levied on bidder deposits."""
        live = rnd.live_moves()
        for move in live:
            ctx.pay(move.caller, move.deposit)
        if self.config.reward_right == 0:
            return
        rewarded = [caller for move in live for caller in rnd.callers.get(move.key, [])]
        budget = self._levy(self.config.reward_right * len(rewarded), rnd.winner)
        for caller in rewarded:
            amount = min(self.config.reward_right, budget)
            if amount == 0:
                break
            ctx.pay(caller, amount)
            budget -= amount

    def _levy(self, total: int, winner: int | None) -> int:
        active = [record for record in self.bidders if not record.slashed]
        if not active or total == 0:
            return 0
        share, remainder = divmod(total, len(active))
        payer = winner if winner is not None and not self.bidders[winner].slashed else active[0].index
        levied = 0
        for record in active:
            due = share + (remainder if record.index == payer else 0)
            taken = min(due, record.held)
            record.held -= taken
            levied += taken
        return levied

    def _conclude(self, ctx: CallContext, winner: int | None, bid: int | None) -> None:
        self.outcome = Outcome(winner=winner, bid=bid, block=ctx.height, rounds=max(1, len(self.rounds)))
        if winner is None:
            logger.info("auction concluded at block %d with no winner", ctx.height)
        else:
            logger.info("auction concluded at block %d: bidder %d wins with %d", ctx.height, winner, bid)

    # oracles over a finished contract

    def restarts(self) -> int:
        return max(0, len(self.rounds) - 1)

    def fake_assignment(self, index: int, nonce: bytes | str | int, rnd: Round | None = None) -> FakeAssignment | None:
        """Off-chain view a selected bidder computes for itself."""
        rnd = rnd or self.round
        if rnd is None or index not in rnd.fake_selected:
            return None
        return FakeAssignment(index=index, fake_bid=compute_fake_bid(rnd.rho, nonce, rnd.m), rho=rnd.rho)
