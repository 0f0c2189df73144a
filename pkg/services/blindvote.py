"""Blind Vote contract.

Steps 0-6 as a phase-gated state machine over `simchain`. Voters obtain an
admin blind signature on the hash of a fresh RSA key, then commit and reveal
through relays. Refund, report and cancellation paths keep every deposit
accounted for.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, Iterable

from services.crypto import (
    RsaPublicKey,
    commit_open,
    digest,
    hash_public_key,
    hash_to_int,
    plausible_public_key,
    verify,
)
from services.errors import (
    AlreadyDelegated,
    AlreadyInitiated,
    AlreadyRefunded,
    AlreadyRevealed,
    BadAdminSig,
    BadAuthSignature,
    BadConfig,
    BadKey,
    BadOpening,
    BadSelfSig,
    BadValue,
    Cancelled,
    DuplicateIdentity,
    InvalidSignature,
    NoDelegation,
    NotAdmin,
    NotCancelled,
    NotEligible,
    NotInitiated,
    NotVoter,
    Reuse,
    TooManyVoters,
    UnknownCommitment,
    WindowClosed,
    WrongDeposit,
    WrongVariant,
)
from services.simchain import CallContext, Chain, Contract, Identity, Transaction, in_window

logger = logging.getLogger(__name__)

Vote = bytes | str
Reducer = Callable[[list[Vote]], dict[Vote, int]]

REFUSED_SIGNATURE = "refused_signature"
OVER_COMMIT = "over_commit"
COMMITMENT_SIZE = 32


class Phase(IntEnum):
    DEPLOYED = 0
    REGISTRATION = 1
    INITIATION = 2
    DELEGATION = 3
    SIGNING = 4
    COMMITMENT = 5
    REVEAL = 6
    CLOSED = 7
    CANCELLED = 8


def count_votes(votes: list[Vote]) -> dict[Vote, int]:
    return dict(Counter(votes))


def ranked_first_choice(votes: list[Vote]) -> dict[Vote, int]:
    """Count the first preference of ballots written as "A>B>C"."""
    tally: Counter[Vote] = Counter()
    for vote in votes:
        separator = b">" if isinstance(vote, bytes) else ">"
        tally[vote.split(separator)[0].strip()] += 1
    return dict(tally)


def delegation_message(h_blinded: int) -> bytes:
    """Payload the voter signs when handing h' to the admin off-chain."""
    return digest("delegate", h_blinded)


@dataclass(frozen=True)
class VotingConfig:
    n_max: int
    fee: int
    relay_reward: int
    admin_deposit: int
    deadlines: tuple[int, int, int, int, int, int]
    offchain_signing: bool = False
    premature: bool = False

    def validate(self) -> None:
        if len(self.deadlines) != 6:
            raise BadConfig("six deadlines are required")
        if any(a >= b for a, b in zip(self.deadlines, self.deadlines[1:])):
            raise BadConfig(f"deadlines must be strictly increasing: {self.deadlines}")
        if self.n_max < 0 or self.relay_reward < 0 or self.admin_deposit < 0:
            raise BadConfig("n_max, relay reward and admin deposit must be non-negative")
        if self.fee < 2 * self.relay_reward:
            raise BadConfig(f"fee {self.fee} cannot pay two relay rewards of {self.relay_reward}")


@dataclass
class VoterRecord:
    address: Identity
    approved: bool = False
    registered: bool = False
    h_blinded: int | None = None
    blind_signature: int | None = None
    refunded: bool = False
    reported: bool = False

    @property
    def valid(self) -> bool:
        return self.approved and self.registered

    @property
    def blind_sig_issued(self) -> bool:
        return self.blind_signature is not None


@dataclass(frozen=True)
class VotingState:
    phase: Phase
    admin_key: RsaPublicKey | None
    commitments: tuple[tuple[bytes, bool], ...]
    used_keys: frozenset[Any]
    tally: dict[Vote, int]
    cancelled: bool
    cause: str | None


@dataclass
class _Ledger:
    relay_rewards: int = 0
    forfeits: int = 0
    confiscated: int = 0
    # set on cancellation: the held pool net of voter fees, and its equal split
    delta_remaining: int | None = None
    refund_share: int = 0
    refund_remainder: int = 0


class VotingContract(Contract):
    functions = frozenset(
        {
            "constructor",
            "approve",
            "register",
            "initiate",
            "delegate",
            "blind_sign",
            "commit",
            "commit_premature",
            "reveal",
            "step1_refund",
            "report_refused_signature",
            "step4_refund",
            "step5_refund",
            "admin_refund",
            "voter_refund",
            "report",
        }
    )

    def __init__(self, reducer: Reducer = count_votes) -> None:
        super().__init__()
        self.reducer = reducer
        self.config: VotingConfig | None = None
        self.admin: Identity | None = None
        self.deploy_height: int | None = None
        self.voters: dict[str, VoterRecord] = {}
        self.admin_key: RsaPublicKey | None = None
        self.commitments: dict[bytes, bool] = {}
        self.used_keys: set[Any] = set()
        self.reveals: list[Vote] = []
        self.successful_commits = 0
        self.cause: str | None = None
        self.admin_refunded = False
        self.ledger = _Ledger()

    # schedule

    @property
    def schedule(self) -> list[tuple[int, int]]:
        assert self.config is not None and self.deploy_height is not None
        starts = (self.deploy_height, *self.config.deadlines[:-1])
        return [(start + 1, end) for start, end in zip(starts, self.config.deadlines)]

    def phase_at(self, height: int) -> Phase:
        if self.cause is not None:
            return Phase.CANCELLED
        if self.config is None or self.deploy_height is None or height <= self.deploy_height:
            return Phase.DEPLOYED
        if height > self.config.deadlines[-1]:
            return Phase.CLOSED
        for index in range(6):
            if in_window(height, index, self.schedule):
                return Phase(index + 1)
        return Phase.CLOSED

    def _require_step(self, ctx: CallContext, step: int) -> None:
        self._require_deployed()
        if self.cause is not None:
            raise Cancelled(f"voting cancelled ({self.cause})")
        if not in_window(ctx.height, step - 1, self.schedule):
            raise WindowClosed(f"step {step} is not open at block {ctx.height}")

    def _require_after(self, ctx: CallContext, step: int) -> None:
        self._require_deployed()
        if ctx.height <= self.config.deadlines[step - 1]:
            raise WindowClosed(f"available after t{step}, now block {ctx.height}")

    def _require_deployed(self) -> None:
        if self.config is None:
            raise BadConfig("contract not deployed")

    def _require_admin(self, ctx: CallContext) -> None:
        if ctx.sender != self.admin:
            raise NotAdmin(ctx.sender.id)

    # views

    def record(self, identity: Identity) -> VoterRecord | None:
        return self.voters.get(identity.id)

    def valid_voters(self) -> list[VoterRecord]:
        return [record for record in self.voters.values() if record.valid]

    @property
    def n(self) -> int:
        return len(self.valid_voters())

    @property
    def tally(self) -> dict[Vote, int]:
        return self.reducer(list(self.reveals))

    @property
    def cancelled(self) -> bool:
        return self.cause is not None

    def state(self, height: int) -> VotingState:
        return VotingState(
            phase=self.phase_at(height),
            admin_key=self.admin_key,
            commitments=tuple(sorted(self.commitments.items())),
            used_keys=frozenset(self.used_keys),
            tally=self.tally,
            cancelled=self.cancelled,
            cause=self.cause,
        )

    def _valid_record(self, identity: Identity) -> VoterRecord:
        record = self.voters.get(identity.id)
        if record is None or not record.valid:
            raise NotVoter(identity.id)
        return record

    # Step 0

    def constructor(self, ctx: CallContext, config: VotingConfig) -> None:
        if self.config is not None:
            raise BadConfig("already deployed")
        config.validate()
        if ctx.height >= config.deadlines[0]:
            raise BadConfig(f"t1={config.deadlines[0]} leaves no registration window at block {ctx.height}")
        if ctx.value != config.admin_deposit:
            raise WrongDeposit(f"deposit must be {config.admin_deposit}, got {ctx.value}")
        self.config = config
        self.admin = ctx.sender
        self.deploy_height = ctx.height
        logger.info("voting deployed at block %d with deadlines %s", ctx.height, config.deadlines)

    # Step 1

    def approve(self, ctx: CallContext, voter: Identity) -> None:
        self._require_step(ctx, 1)
        self._require_admin(ctx)
        existing = self.voters.get(voter.id)
        if existing is not None and existing.approved:
            return
        approved = sum(1 for item in self.voters.values() if item.approved)
        if approved >= self.config.n_max:
            raise TooManyVoters(f"n_max={self.config.n_max} reached")
        self.voters.setdefault(voter.id, VoterRecord(address=voter)).approved = True

    def register(self, ctx: CallContext) -> None:
        self._require_step(ctx, 1)
        if ctx.value != self.config.fee:
            raise WrongDeposit(f"registration fee is {self.config.fee}, got {ctx.value}")
        record = self.voters.setdefault(ctx.sender.id, VoterRecord(address=ctx.sender))
        if record.registered:
            raise DuplicateIdentity(ctx.sender.id)
        record.registered = True

    def step1_refund(self, ctx: CallContext) -> None:
        self._require_after(ctx, 1)
        record = self.voters.get(ctx.sender.id)
        if record is None or not record.registered or record.approved:
            raise NotEligible("only registered voters who were not approved")
        if record.refunded:
            raise AlreadyRefunded(ctx.sender.id)
        record.refunded = True
        ctx.pay(ctx.sender, self.config.fee)

    # Step 2

    def initiate(self, ctx: CallContext, n: int, e: int) -> None:
        self._require_step(ctx, 2)
        self._require_admin(ctx)
        if self.admin_key is not None:
            raise AlreadyInitiated("admin key is immutable")
        if not plausible_public_key(n, e):
            raise BadKey(f"implausible key (N={n}, e={e})")
        self.admin_key = RsaPublicKey(n, e)

    # Step 3

    def delegate(self, ctx: CallContext, h_blinded: int) -> None:
        self._require_step(ctx, 3)
        record = self._valid_record(ctx.sender)
        if record.reported:
            raise NotEligible(f"{ctx.sender.id} was reported")
        if record.h_blinded is not None:
            raise AlreadyDelegated(ctx.sender.id)
        if self.admin_key is None:
            raise NotInitiated("admin key missing")
        if not 0 < h_blinded < self.admin_key.n:
            raise BadValue("h' outside (0, N)")
        record.h_blinded = h_blinded

    # Step 4

    def blind_sign(self, ctx: CallContext, voter: Identity, s_blinded: int) -> None:
        self._require_step(ctx, 4)
        self._require_admin(ctx)
        record = self.voters.get(voter.id)
        if record is None or record.h_blinded is None:
            raise NoDelegation(voter.id)
        if record.reported:
            raise NotEligible(f"{voter.id} was reported")
        if record.blind_sig_issued:
            raise Reuse(f"{voter.id} already holds a signature")
        if not verify(record.h_blinded, s_blinded, self.admin_key):
            raise InvalidSignature(voter.id)
        record.blind_signature = s_blinded

    def report_refused_signature(self, ctx: CallContext, voter: Identity) -> None:
        self._require_after(ctx, 4)
        if self.cause is not None:
            raise Cancelled(f"voting cancelled ({self.cause})")
        record = self.voters.get(voter.id)
        if record is None or not record.valid or record.reported:
            raise NotEligible(f"{voter.id} is not a valid voter")
        if record.h_blinded is None or record.blind_sig_issued:
            raise NotEligible(f"{voter.id} has no unanswered delegation")
        self._cancel(ctx, REFUSED_SIGNATURE)

    def step4_refund(self, ctx: CallContext) -> None:
        self._require_cancelled(REFUSED_SIGNATURE)
        record = self._refundable(ctx.sender)
        record.refunded = True
        self._pay(ctx, ctx.sender, self.ledger.refund_share)

    # off-chain Steps 3-4

    def report(self, ctx: CallContext, voter: Identity, h_blinded: int, sigma: bytes) -> None:
        self._require_deployed()
        if not self.config.offchain_signing:
            raise WrongVariant("report is only defined for off-chain signing")
        if self.cause is not None:
            raise Cancelled(f"voting cancelled ({self.cause})")
        self._require_admin(ctx)
        schedule = self.schedule
        if not (in_window(ctx.height, 2, schedule) or in_window(ctx.height, 3, schedule)):
            raise WindowClosed(f"reports close at t4, now block {ctx.height}")
        record = self._valid_record(voter)
        if record.reported:
            raise AlreadyRefunded(f"{voter.id} already confiscated")
        if not ctx.chain.verify_message(voter, delegation_message(h_blinded), sigma):
            raise BadAuthSignature(voter.id)
        if record.h_blinded is None or record.h_blinded == h_blinded:
            raise NotEligible(f"{voter.id} has not demanded a second signature")
        record.reported = True
        # the signature already issued may still be relayed twice
        payout = self.config.fee - 2 * self.config.relay_reward
        self.ledger.confiscated += payout
        ctx.pay(self.admin, payout)
        self.record_penalty(ctx, voter, "double_demand", self.config.fee)
        logger.warning("voter %s demanded a second signature; deposit %d confiscated", voter.id, self.config.fee)

    # Step 5

    def commit(self, ctx: CallContext, n_i: int, e_i: int, s_i: int, c_i: bytes, sc_i: int) -> None:
        self._require_step(ctx, 5)
        if self.config.premature:
            raise WrongVariant("use commit_premature")
        if self.admin_key is None:
            raise NotInitiated("admin key missing")
        if not plausible_public_key(n_i, e_i):
            raise BadKey(f"implausible voter key (N={n_i}, e={e_i})")
        h = hash_public_key(RsaPublicKey(n_i, e_i), self.admin_key.n)
        if h in (0, 1) or not verify(h, s_i, self.admin_key):
            raise BadAdminSig("s_i does not sign hash(N_i, e_i)")
        if not isinstance(c_i, bytes) or len(c_i) != COMMITMENT_SIZE:
            raise BadValue("commitment must be a digest")
        c_int = hash_to_int(c_i, n_i)
        if c_int in (0, 1) or not verify(c_int, sc_i, RsaPublicKey(n_i, e_i)):
            raise BadSelfSig("sc_i does not sign c_i under (N_i, e_i)")
        key = (n_i, e_i, s_i)
        if key in self.used_keys or c_i in self.commitments:
            raise Reuse("signature already consumed")
        self._accept_commitment(ctx, key, c_i)

    def commit_premature(self, ctx: CallContext, s_i: int, c_i: bytes) -> None:
        self._require_step(ctx, 5)
        if not self.config.premature:
            raise WrongVariant("premature commitment is disabled")
        if self.admin_key is None:
            raise NotInitiated("admin key missing")
        if not isinstance(c_i, bytes) or len(c_i) != COMMITMENT_SIZE:
            raise BadValue("commitment must be a digest")
        c_int = hash_to_int(c_i, self.admin_key.n)
        if c_int in (0, 1) or not verify(c_int, s_i, self.admin_key):
            raise BadAdminSig("s_i does not sign c_i")
        if s_i in self.used_keys or c_i in self.commitments:
            raise Reuse("signature already consumed")
        self._accept_commitment(ctx, s_i, c_i)

    def _accept_commitment(self, ctx: CallContext, key: Any, c_i: bytes) -> None:
        self.used_keys.add(key)
        self._pay_relay(ctx)
        if self.successful_commits >= self.n:
            self.successful_commits += 1
            logger.warning("commit %d exceeds n=%d", self.successful_commits, self.n)
            self._cancel(ctx, OVER_COMMIT)
            return
        self.successful_commits += 1
        self.commitments[c_i] = False

    def step5_refund(self, ctx: CallContext) -> None:
        self._require_cancelled(OVER_COMMIT)
        record = self._refundable(ctx.sender)
        record.refunded = True
        self._pay(ctx, ctx.sender, self.ledger.refund_share)

    # Step 6

    def reveal(self, ctx: CallContext, c_i: bytes, v_i: Vote, x_i: bytes | str | int) -> None:
        self._require_step(ctx, 6)
        if c_i not in self.commitments:
            raise UnknownCommitment("no such commitment")
        if self.commitments[c_i]:
            raise AlreadyRevealed("commitment already opened")
        if not commit_open(c_i, v_i, x_i):
            raise BadOpening("opening does not match")
        self.commitments[c_i] = True
        self.reveals.append(v_i)
        self._pay_relay(ctx)

    # after t6

    def voter_refund(self, ctx: CallContext) -> None:
        self._require_after(ctx, 6)
        if self.cause is not None:
            raise Cancelled(f"voting cancelled ({self.cause}); use the step refunds")
        record = self._refundable(ctx.sender)
        if not self.config.offchain_signing and record.h_blinded is None:
            raise NotEligible(f"{ctx.sender.id} never delegated and forfeits the fee")
        record.refunded = True
        ctx.pay(ctx.sender, self.config.fee - 2 * self.config.relay_reward)

    def admin_refund(self, ctx: CallContext) -> None:
        self._require_deployed()
        self._require_admin(ctx)
        if self.admin_refunded:
            raise AlreadyRefunded("admin")
        if self.cause is not None:
            if self.ledger.refund_remainder == 0:
                raise Cancelled(f"voting cancelled ({self.cause}); the pool goes to the voters")
            self.admin_refunded = True
            self._pay(ctx, self.admin, self.ledger.refund_remainder)
            return
        self._require_after(ctx, 6)
        forfeits = 0
        if not self.config.offchain_signing:
            for record in self.valid_voters():
                if record.h_blinded is None and not record.reported:
                    forfeits += self.config.fee
                    self.record_penalty(ctx, record.address, "no_delegation", self.config.fee)
        self.admin_refunded = True
        self.ledger.forfeits = forfeits
        self._pay(ctx, self.admin, self.config.admin_deposit + forfeits)

    # helpers

    def _require_cancelled(self, cause: str) -> None:
        self._require_deployed()
        if self.cause != cause:
            raise NotCancelled(f"no {cause} cancellation")

    def _refundable(self, identity: Identity) -> VoterRecord:
        record = self.voters.get(identity.id)
        if record is None or not record.valid or record.reported:
            raise NotEligible(identity.id)
        if record.refunded:
            raise AlreadyRefunded(identity.id)
        return record

    def _pay_relay(self, ctx: CallContext) -> None:
        self.ledger.relay_rewards += self._pay(ctx, ctx.sender, self.config.relay_reward)

    def _pay(self, ctx: CallContext, to: Identity, amount: int) -> int:
        amount = max(0, amount)
        if amount > ctx.held():
            logger.warning("contract holds %d, cannot pay %d to %s", ctx.held(), amount, to.id)
            amount = ctx.held()
        ctx.pay(to, amount)
        return amount

    def _cancel(self, ctx: CallContext, cause: str) -> None:
        self.cause = cause
        # every later call is rejected, so what the contract holds now is final
        refundable = [record for record in self.valid_voters() if not record.reported]
        unapproved = sum(
            self.config.fee
            for record in self.voters.values()
            if record.registered and not record.approved and not record.refunded
        )
        pool = ctx.held() - unapproved
        share = pool // len(refundable) if refundable else 0
        self.ledger.delta_remaining = pool - self.config.fee * len(refundable)
        self.ledger.refund_share = share
        self.ledger.refund_remainder = pool - share * len(refundable)
        kind = "refused_signature" if cause == REFUSED_SIGNATURE else "over_sign"
        self.record_penalty(ctx, self.admin, kind, self.config.admin_deposit)
        logger.info(
            "voting cancelled at block %d: %s (remaining deposit %d)",
            ctx.height,
            cause,
            self.ledger.delta_remaining,
        )


@dataclass
class _Request:
    h_blinded: int
    sigma: bytes


@dataclass
class OffchainChannel:
    """Authenticated voter/admin channel for Steps 3-4 without transactions."""

    chain: Chain
    admin: Identity
    contract: str = "blindvote"
    requests: dict[str, list[_Request]] = field(default_factory=dict)
    signatures: dict[str, int] = field(default_factory=dict)

    def deliver(self, voter: Identity, h_blinded: int, sigma: bytes) -> None:
        if not self.chain.verify_message(voter, delegation_message(h_blinded), sigma):
            raise BadAuthSignature(voter.id)
        self.requests.setdefault(voter.id, []).append(_Request(h_blinded, sigma))

    def return_signature(self, voter: Identity, s_blinded: int) -> None:
        self.signatures[voter.id] = s_blinded

    def signature_for(self, voter: Identity) -> int | None:
        return self.signatures.get(voter.id)

    def evidence(self, voter: Identity) -> tuple[int, bytes] | None:
        """First request the admin answered for this voter."""
        requests = self.requests.get(voter.id)
        if not requests or voter.id not in self.signatures:
            return None
        return requests[0].h_blinded, requests[0].sigma

    def report(self, voter: Identity, h_blinded: int, sigma: bytes) -> Transaction:
        return self.chain.submit(
            self.admin, self.contract, "report", voter=voter, h_blinded=h_blinded, sigma=sigma
        )


def expected_tally(votes: Iterable[Vote], reducer: Reducer = count_votes) -> dict[Vote, int]:
    return reducer(list(votes))
