"""Drives one Blind Vote scenario through Steps 0-6 on a fresh chain."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from harness.checks import Check, Purse, conservation, expect
from harness.policies import ADMIN, VOTER, Policy, get_policy
from harness.scenario import Scenario, VoterSpec
from harness.traces import ObservationTrace, observe_votes
from services.blindvote import (
    OVER_COMMIT,
    REFUSED_SIGNATURE,
    OffchainChannel,
    VotingConfig,
    VotingContract,
    count_votes,
    delegation_message,
    expected_tally,
    ranked_first_choice,
)
from services.costs import load_cost_model
from services.crypto import (
    RsaKeyPair,
    RsaPublicKey,
    blind,
    commitment,
    hash_public_key,
    hash_to_int,
    keygen,
    random_unit,
    sign,
    unblind,
    verify,
)
from services.errors import InvalidScenario
from services.simchain import Chain, Identity, Transaction, derive, rng_for
from services.state import LabSettings

logger = logging.getLogger(__name__)

CONTRACT = "blindvote"
# Steps 0-6 proper; refunds and reports are charged but reported apart.
PROTOCOL_FUNCTIONS = frozenset(
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
    }
)
REDUCERS = {"count": count_votes, "ranked": ranked_first_choice}

VOTER_GAS_ALLOWANCE = 2_000_000
ADMIN_GAS_ALLOWANCE = 8_000_000
ADMIN_GAS_PER_VOTER = 400_000


@dataclass
class Proxy:
    """A third party voting with rights delegated to its own key pairs."""

    name: str
    identity: Identity
    vote: str | None = None
    keys: dict[int, RsaKeyPair] = field(default_factory=dict)
    signatures: dict[int, int] = field(default_factory=dict)


@dataclass
class Ballot:
    """Off-chain state of one voting right."""

    spec: VoterSpec
    index: int
    policy: Policy
    address: Identity
    proxy: Proxy | None = None
    # None when a proxy holds the secret key
    key: RsaKeyPair | None = None
    public: RsaPublicKey | None = None
    nonce: str = ""
    c: bytes = b""
    h: int = 0
    r: int = 0
    h_blinded: int = 0
    s: int | None = None
    delegated: bool = False
    committed: bool = False

    @property
    def vote(self) -> str:
        if self.proxy is not None and self.proxy.vote is not None:
            return self.proxy.vote
        return self.spec.vote

    @property
    def owner(self) -> str:
        return self.address.owner or self.address.id


@dataclass
class Post:
    """A message on the anonymous notice board that relays pick up."""

    function: str
    kwargs: dict[str, Any]
    ballot: Ballot | None = None
    direct: Identity | None = None


@dataclass
class VotingRun:
    scenario: Scenario
    seed: int
    chain: Chain
    contract: VotingContract
    ballots: list[Ballot]
    checks: list[Check] = field(default_factory=list)
    trace: ObservationTrace | None = None
    proxies: dict[str, Proxy] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def summary(self) -> dict[str, Any]:
        return {
            "tally": {str(key): value for key, value in sorted(self.contract.tally.items(), key=str)},
            "n": self.contract.n,
            "cancelled": self.contract.cause,
            "commitments": len(self.contract.commitments),
            "penalties": [penalty.kind for penalty in self.contract.penalties],
        }


class VotingRunner:
    def __init__(self, scenario: Scenario, settings: LabSettings, seed: int) -> None:
        self.scenario = scenario
        self.settings = settings
        self.seed = seed
        costs = load_cost_model(Path(settings.blindvote_costs))
        missing = costs.covers(set(VotingContract.functions))
        if missing:
            raise InvalidScenario(f"cost model has no entry for {sorted(missing)}")
        self.chain = Chain(seed, costs, settings.gas_policy, settings.gas_price, settings.blocks_per_unit)
        self.contract = VotingContract(reducer=REDUCERS[scenario.voting_option("reducer")])
        self.chain.add_contract(CONTRACT, self.contract)
        self.purse = Purse(self.chain)
        self.admin_policy = get_policy(scenario.admin_policy, ADMIN)
        self.admin = self.chain.create_identity(owner="admin")
        self.admin_key = keygen(settings.key_bits, rng_for(seed, "admin-key"))
        self.proxies: dict[str, Proxy] = {}
        self.ballots = [self._ballot(index, spec) for index, spec in enumerate(scenario.voters)]
        self.extra: Ballot | None = None
        self.channel: OffchainChannel | None = None
        self.board: list[Post] = []
        self.relayed = 0

    def _ballot(self, index: int, spec: VoterSpec) -> Ballot:
        address = self.chain.create_identity(owner=f"voter:{spec.name}")
        proxy = self._proxy(spec.delegate_to) if spec.delegate_to else None
        return Ballot(spec, index, get_policy(spec.policy, VOTER), address, proxy)

    def _proxy(self, name: str) -> Proxy:
        if name not in self.proxies:
            identity = self.chain.create_identity(owner=f"delegate:{name}")
            vote = self.scenario.config.get("delegate_votes", {}).get(name)
            self.proxies[name] = Proxy(name, identity, vote)
        return self.proxies[name]

    @property
    def fee(self) -> int:
        return self.scenario.voting_option("fee")

    @property
    def relay_reward(self) -> int:
        return self.scenario.voting_option("relay_reward")

    @property
    def admin_deposit(self) -> int:
        return self.scenario.voting_option("admin_deposit")

    # timeline

    def _enter(self, step: int) -> None:
        """Move to the block right before step `step` opens; submissions land in its first block."""
        start = self.contract.schedule[step - 1][0]
        self.chain.advance_to(start - 1)

    def _deadlines(self, deploy: int) -> tuple[int, ...]:
        span = self.scenario.voting_option("window") * self.settings.blocks_per_unit
        return tuple(deploy + step * span for step in range(1, 7))

    def run(self) -> VotingRun:
        logger.info("blindvote %s run %r with %d voters (seed %d)",
                    self.scenario.variant, self.scenario.name, len(self.ballots), self.seed)
        self._deploy()
        self._register()
        self._initiate()
        self._prepare_ballots()
        self._delegate()
        self._sign()
        if self._refused():
            self._report_refusal()
        else:
            self._commit()
            if self.contract.cause == OVER_COMMIT:
                self._cancelled_refunds("step5_refund")
            else:
                self._reveal()
                self._final_refunds()
        self.chain.advance_block()
        result = VotingRun(self.scenario, self.seed, self.chain, self.contract, self.ballots)
        result.proxies = self.proxies
        result.checks = self.checks()
        result.trace = observe_votes(self.chain, CONTRACT)
        return result

    # Step 0

    def _deploy(self) -> None:
        approved = sum(1 for ballot in self.ballots if ballot.spec.approved)
        config = VotingConfig(
            n_max=int(self.scenario.config.get("n_max", approved)),
            fee=self.fee,
            relay_reward=self.relay_reward,
            admin_deposit=self.admin_deposit,
            deadlines=self._deadlines(self.chain.height + 1),
            offchain_signing=self.scenario.variant == "offchain",
            premature=self.scenario.variant == "premature",
        )
        allowance = self.settings.gas_price * (ADMIN_GAS_ALLOWANCE + ADMIN_GAS_PER_VOTER * len(self.ballots))
        self.purse.fund(self.admin, self.admin_deposit + allowance)
        for ballot in self.ballots:
            self.purse.fund(ballot.address, self.fee + self.settings.gas_price * VOTER_GAS_ALLOWANCE)
        tx = self.chain.submit(self.admin, CONTRACT, "constructor", self.admin_deposit, config=config)
        self.chain.advance_block()
        if not tx.accepted:
            raise InvalidScenario(f"deployment rejected: {tx.reason}")
        if config.offchain_signing:
            self.channel = OffchainChannel(self.chain, self.admin, CONTRACT)

    # Steps 1-2

    def _register(self) -> None:
        self._enter(1)
        for ballot in self.ballots:
            if ballot.spec.approved:
                self.chain.submit(self.admin, CONTRACT, "approve", voter=ballot.address)
        for ballot in self.ballots:
            self.chain.submit(ballot.address, CONTRACT, "register", self.fee)
        self.chain.advance_block()

    def _initiate(self) -> None:
        self._enter(2)
        self.chain.submit(self.admin, CONTRACT, "initiate", n=self.admin_key.n, e=self.admin_key.e)
        self.chain.advance_block()

    def _participants(self) -> list[Ballot]:
        return [ballot for ballot in self.ballots if ballot.spec.approved and ballot.policy.participates]

    def _prepare_ballots(self) -> None:
        for ballot in self._participants():
            self._prepare(ballot, ballot.vote, ("voter", ballot.index))

    def _prepare(self, ballot: Ballot, vote: str, label: tuple[Any, ...]) -> None:
        admin_n = self.admin_key.n
        premature = self.scenario.variant == "premature"
        proxy = ballot.proxy
        # a proxy picks the nonce and the key pair; the voter only sees the public key
        nonce_label, key_label = ("vote-nonce", "voter-key") if proxy is None else ("proxy-nonce", "proxy-key")
        secret_label = label if proxy is None else (proxy.name, *label)
        attempt = 0
        while True:
            ballot.nonce = derive(self.seed, nonce_label, *secret_label, attempt).hex()
            ballot.c = commitment(vote, ballot.nonce)
            if premature:
                ballot.h = hash_to_int(ballot.c, admin_n)
                if ballot.h not in (0, 1):
                    break
            else:
                key = keygen(self.settings.key_bits, rng_for(self.seed, key_label, *secret_label, attempt))
                ballot.public = key.public
                ballot.h = hash_public_key(key.public, admin_n)
                if ballot.h not in (0, 1) and hash_to_int(ballot.c, key.n) not in (0, 1):
                    if proxy is None:
                        ballot.key = key
                    else:
                        proxy.keys[ballot.index] = key
                    break
            attempt += 1
        ballot.r = random_unit(admin_n, rng_for(self.seed, "blinding", *label))
        ballot.h_blinded = blind(ballot.h, ballot.r, self.admin_key.public)

    # Steps 3-4

    def _delegate(self) -> None:
        self._enter(3)
        for ballot in self._participants():
            if self.channel is not None:
                if self._delegate_offchain(ballot):
                    if ballot.policy.double_demand:
                        self._demand_again(ballot)
                    continue
            self.chain.submit(ballot.address, CONTRACT, "delegate", h_blinded=ballot.h_blinded)
            ballot.delegated = True
        self.chain.advance_block()

    def _delegate_offchain(self, ballot: Ballot) -> bool:
        sigma = self.chain.sign_message(ballot.address, delegation_message(ballot.h_blinded))
        self.channel.deliver(ballot.address, ballot.h_blinded, sigma)
        if not self.admin_policy.signs_offchain:
            logger.info("admin ignored the off-chain request of %s", ballot.owner)
            return False
        s_blinded = sign(ballot.h_blinded, self.admin_key)
        self.channel.return_signature(ballot.address, s_blinded)
        ballot.s = unblind(s_blinded, ballot.r, self.admin_key.n)
        self._hand_over(ballot)
        return True

    def _demand_again(self, ballot: Ballot) -> None:
        rng = rng_for(self.seed, "blinding", "again", ballot.index)
        while True:
            h_again = blind(ballot.h, random_unit(self.admin_key.n, rng), self.admin_key.public)
            if h_again != ballot.h_blinded:
                break
        self.chain.submit(ballot.address, CONTRACT, "delegate", h_blinded=h_again)
        ballot.delegated = True

    def _sign(self) -> None:
        self._enter(4)
        for ballot in self._participants():
            record = self.contract.record(ballot.address)
            if record is None or record.h_blinded is None:
                continue
            evidence = self.channel.evidence(ballot.address) if self.channel is not None else None
            if evidence is not None:
                self.channel.report(ballot.address, *evidence)
                continue
            if not self.admin_policy.signs and ballot.index == self.scenario.refuse_target:
                logger.info("admin withholds the blind signature of %s", ballot.owner)
                continue
            s_blinded = sign(record.h_blinded, self.admin_key)
            self.chain.submit(self.admin, CONTRACT, "blind_sign", voter=record.address, s_blinded=s_blinded)
        if self.admin_policy.extra_signature:
            self._sign_for_self()
        self.chain.advance_block()
        for ballot in self._participants():
            record = self.contract.record(ballot.address)
            if ballot.s is None and record is not None and record.blind_signature is not None:
                ballot.s = unblind(record.blind_signature, ballot.r, self.admin_key.n)
                assert verify(ballot.h, ballot.s, self.admin_key.public)
                self._hand_over(ballot)

    def _hand_over(self, ballot: Ballot) -> None:
        """A delegating voter passes the unblinded signature to its proxy, who runs Steps 5-6."""
        if ballot.proxy is not None:
            ballot.proxy.signatures[ballot.index] = ballot.s
            logger.info("%s handed its voting right to %s", ballot.owner, ballot.proxy.identity.owner)

    def _sign_for_self(self) -> None:
        spec = VoterSpec(name="admin-extra", vote=self.scenario.config.get("extra_vote", "extra"))
        extra = Ballot(spec, len(self.ballots), get_policy("honest", VOTER), self.admin)
        self._prepare(extra, spec.vote, ("admin-extra",))
        extra.s = sign(extra.h, self.admin_key)
        self.extra = extra

    def _refused(self) -> list[Ballot]:
        refused = []
        for ballot in self._participants():
            record = self.contract.record(ballot.address)
            if record is not None and record.h_blinded is not None and not record.reported and ballot.s is None:
                refused.append(ballot)
        return refused

    def _report_refusal(self) -> None:
        self._enter(5)
        first = self._refused()[0]
        self.chain.submit(first.address, CONTRACT, "report_refused_signature", voter=first.address)
        self.chain.advance_block()
        self._cancelled_refunds("step4_refund")

    def _cancelled_refunds(self, function: str) -> None:
        if self.contract.cause is None:
            return
        for ballot in self.ballots:
            record = self.contract.record(ballot.address)
            if record is not None and record.valid and not record.reported:
                self.chain.submit(ballot.address, CONTRACT, function)
        if self.contract.ledger.refund_remainder:
            self.chain.submit(self.admin, CONTRACT, "admin_refund")
        self.chain.advance_block()

    # Steps 5-6

    def _post(self, ballot: Ballot, function: str, **kwargs: Any) -> None:
        direct = ballot.address if not ballot.policy.uses_relays and ballot.proxy is None else None
        self.board.append(Post(function, kwargs, ballot, direct))

    def _drain(self) -> list[tuple[Post, Transaction]]:
        """Relays submit every board message from a fresh pseudonym."""
        sent = []
        for post in self.board:
            if post.direct is not None:
                sender = post.direct
            else:
                relay = self.relayed % self.scenario.relays
                sender = self.chain.create_identity(owner=f"relay:{relay}", pseudonym=True)
                self.relayed += 1
            sent.append((post, self.chain.submit(sender, CONTRACT, post.function, **post.kwargs)))
        self.board = []
        return sent

    def _commit(self) -> None:
        self._enter(5)
        voters = [ballot for ballot in self._participants() if ballot.s is not None]
        if self.extra is not None:
            voters.append(self.extra)
        for ballot in voters:
            if self.scenario.variant == "premature":
                self._post(ballot, "commit_premature", s_i=ballot.s, c_i=ballot.c)
                continue
            if ballot.proxy is None:
                key, s_i = ballot.key, ballot.s
            else:
                key, s_i = ballot.proxy.keys[ballot.index], ballot.proxy.signatures[ballot.index]
            sc_i = sign(hash_to_int(ballot.c, key.n), key)
            self._post(ballot, "commit", n_i=key.n, e_i=key.e, s_i=s_i, c_i=ballot.c, sc_i=sc_i)
        sent = self._drain()
        self.chain.advance_block()
        for post, tx in sent:
            post.ballot.committed = tx.accepted and self.contract.commitments.get(post.ballot.c) is not None

    def _reveal(self) -> None:
        self._enter(6)
        voters = [ballot for ballot in (*self._participants(), self.extra) if ballot is not None and ballot.committed]
        for ballot in voters:
            if ballot.policy.reveals:
                self._post(ballot, "reveal", c_i=ballot.c, v_i=ballot.vote, x_i=ballot.nonce)
        self._drain()
        self.chain.advance_block()

    def _final_refunds(self) -> None:
        self.chain.advance_to(self.contract.config.deadlines[-1])
        for ballot in self.ballots:
            if not ballot.spec.approved:
                self.chain.submit(ballot.address, CONTRACT, "step1_refund")
            elif ballot.policy.participates and not self._reported(ballot):
                self.chain.submit(ballot.address, CONTRACT, "voter_refund")
        self.chain.submit(self.admin, CONTRACT, "admin_refund")

    def _reported(self, ballot: Ballot) -> bool:
        record = self.contract.record(ballot.address)
        return record is not None and record.reported

    # oracles

    def checks(self) -> list[Check]:
        contract = self.contract
        checks = [conservation(self.chain)]
        checks.append(
            Check("unreusability", contract.cancelled or len(contract.commitments) <= contract.n,
                  f"{len(contract.commitments)} commitments for n={contract.n}")
        )
        if contract.cause is None:
            checks.extend(self._completed_checks())
        elif contract.cause == REFUSED_SIGNATURE:
            checks.extend(self._cancel_checks("refused_signature_refunds"))
        else:
            checks.extend(self._cancel_checks("over_commit_refunds"))
        demanders = sum(1 for ballot in self.ballots if ballot.policy.double_demand)
        if demanders:
            confiscations = [penalty for penalty in contract.penalties if penalty.kind == "double_demand"]
            checks.append(expect("confiscation", len(confiscations), demanders))
        return checks

    def _completed_checks(self) -> list[Check]:
        contract = self.contract
        counted = [ballot.vote for ballot in self._participants() if ballot.committed and ballot.policy.reveals]
        if self.extra is not None and self.extra.committed:
            counted.append(self.extra.vote)
        checks = [expect("tally", contract.tally, expected_tally(counted, contract.reducer))]
        for ballot in self.ballots:
            if not (ballot.spec.approved and ballot.policy.participates) or ballot.policy.double_demand:
                continue
            earned = 2 * self.relay_reward if ballot.address == self._direct_sender(ballot) else 0
            expected = earned - 2 * self.relay_reward - self.purse.fees(ballot.owner)
            checks.append(expect(f"voter_balance[{ballot.spec.name}]", self.purse.net(ballot.owner), expected))
        ledger = contract.ledger
        expected_admin = ledger.forfeits + ledger.confiscated - self.purse.fees("admin")
        checks.append(expect("admin_balance", self.purse.net("admin"), expected_admin))
        return checks

    def _direct_sender(self, ballot: Ballot) -> Identity | None:
        if ballot.committed and not ballot.policy.uses_relays and ballot.proxy is None:
            return ballot.address
        return None

    def _cancel_checks(self, name: str) -> list[Check]:
        share = self.contract.ledger.refund_share
        checks = []
        for ballot in self.ballots:
            record = self.contract.record(ballot.address)
            if record is None or not record.valid or record.reported or self._direct_sender(ballot):
                continue
            expected = share - self.fee - self.purse.fees(ballot.owner)
            checks.append(expect(f"{name}[{ballot.spec.name}]", self.purse.net(ballot.owner), expected))
        return checks


def run_voting(scenario: Scenario, settings: LabSettings, seed: int) -> VotingRun:
    return VotingRunner(scenario, settings, seed).run()
