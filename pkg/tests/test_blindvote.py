from __future__ import annotations

import random
from dataclasses import dataclass

import pytest

from harness.runner import run
from harness.scenario import Scenario, VoterSpec
from services.blindvote import (
    OffchainChannel,
    Phase,
    VotingConfig,
    VotingContract,
    delegation_message,
    expected_tally,
    ranked_first_choice,
)
from services.crypto import (
    blind,
    commitment,
    hash_public_key,
    hash_to_int,
    keygen,
    random_unit,
    sign,
    unblind,
)
from services.errors import BadConfig
from services.simchain import Chain, Identity

FEE, RHO, DELTA = 100, 10, 50


@dataclass
class Election:
    chain: Chain
    contract: VotingContract
    admin: Identity
    voters: list[Identity]

    def call(self, sender: Identity, function: str, value: int = 0, **kwargs):
        tx = self.chain.submit(sender, "blindvote", function, value, **kwargs)
        self.chain.advance_block()
        return tx


def deploy(
    chain: Chain,
    n: int = 2,
    offchain: bool = False,
    premature: bool = False,
    rho: int = RHO,
    delta: int = DELTA,
) -> Election:
    admin = chain.create_identity(owner="admin")
    chain.mint(admin, delta)
    voters = [chain.create_identity(owner=f"voter:{index}") for index in range(n)]
    for voter in voters:
        chain.mint(voter, FEE)
    contract = VotingContract()
    chain.add_contract("blindvote", contract)
    config = VotingConfig(
        n_max=n,
        fee=FEE,
        relay_reward=rho,
        admin_deposit=delta,
        deadlines=(2, 3, 4, 5, 6, 7),
        offchain_signing=offchain,
        premature=premature,
    )
    election = Election(chain, contract, admin, voters)
    assert election.call(admin, "constructor", delta, config=config).accepted
    return election


def register_all(election: Election) -> None:
    chain = election.chain
    for voter in election.voters:
        chain.submit(election.admin, "blindvote", "approve", voter=voter)
    for voter in election.voters:
        chain.submit(voter, "blindvote", "register", FEE)
    chain.advance_block()


ADMIN_KEY = keygen(64, random.Random("admin"))


def test_schedule_and_phases(voting_chain):
    election = deploy(voting_chain)
    contract = election.contract
    assert contract.schedule[0] == (2, 2)
    assert contract.schedule[-1] == (7, 7)
    assert contract.phase_at(1) is Phase.DEPLOYED
    assert contract.phase_at(2) is Phase.REGISTRATION
    assert contract.phase_at(6) is Phase.COMMITMENT
    assert contract.phase_at(8) is Phase.CLOSED


def test_config_validation():
    with pytest.raises(BadConfig):
        VotingConfig(2, 10, 10, 0, (2, 3, 4, 5, 6, 7)).validate()
    with pytest.raises(BadConfig):
        VotingConfig(2, 100, 10, 0, (2, 3, 3, 5, 6, 7)).validate()


def test_constructor_rejects_wrong_deposit(voting_chain):
    admin = voting_chain.create_identity()
    voting_chain.mint(admin, 40)
    voting_chain.add_contract("blindvote", VotingContract())
    config = VotingConfig(1, FEE, RHO, DELTA, (2, 3, 4, 5, 6, 7))
    tx = voting_chain.submit(admin, "blindvote", "constructor", 40, config=config)
    voting_chain.advance_block()
    assert tx.reason == "WrongDeposit"
    assert voting_chain.balance_of(admin) == 40


def test_registration_rules(voting_chain):
    election = deploy(voting_chain, n=1)
    voter, chain = election.voters[0], election.chain
    outsider = chain.create_identity()
    chain.mint(outsider, FEE)
    approve_by_voter = chain.submit(voter, "blindvote", "approve", voter=voter)
    short = chain.submit(voter, "blindvote", "register", FEE - 1)
    chain.submit(election.admin, "blindvote", "approve", voter=voter)
    extra = chain.submit(election.admin, "blindvote", "approve", voter=outsider)
    chain.advance_block()
    assert approve_by_voter.reason == "NotAdmin"
    assert short.reason == "WrongDeposit"
    assert extra.reason == "TooManyVoters"
    late = election.call(voter, "register", FEE)
    assert late.reason == "WindowClosed"
    assert election.contract.n == 0


def test_unapproved_voter_gets_the_fee_back(voting_chain):
    election = deploy(voting_chain, n=1)
    voter = election.voters[0]
    assert election.call(voter, "register", FEE).accepted
    refund = voting_chain.submit(voter, "blindvote", "step1_refund")
    voting_chain.advance_block()
    assert refund.accepted
    assert voting_chain.balance_of(voter) == FEE
    assert election.call(voter, "step1_refund").reason == "AlreadyRefunded"


def test_admin_key_is_immutable(voting_chain):
    election = deploy(voting_chain)
    register_all(election)
    chain = election.chain
    chain.submit(election.admin, "blindvote", "initiate", n=ADMIN_KEY.n, e=ADMIN_KEY.e)
    again = chain.submit(election.admin, "blindvote", "initiate", n=ADMIN_KEY.n, e=3)
    chain.advance_block()
    assert again.reason == "AlreadyInitiated"
    assert election.contract.admin_key == ADMIN_KEY.public


def full_ballot(vote: str, seed: int):
    key = keygen(64, random.Random(seed))
    h = hash_public_key(key.public, ADMIN_KEY.n)
    r = random_unit(ADMIN_KEY.n, random.Random(seed + 1))
    h_blinded = blind(h, r, ADMIN_KEY.public)
    nonce = f"nonce-{seed}"
    c = commitment(vote, nonce)
    sc = sign(hash_to_int(c, key.n), key)
    return key, r, h_blinded, nonce, c, sc


def test_honest_walkthrough_pays_relays_and_refunds(voting_chain):
    election = deploy(voting_chain)
    chain, contract, admin = election.chain, election.contract, election.admin
    register_all(election)
    election.call(admin, "initiate", n=ADMIN_KEY.n, e=ADMIN_KEY.e)
    ballots = [full_ballot(vote, 10 * index) for index, vote in enumerate(["yes", "no"])]
    for voter, ballot in zip(election.voters, ballots):
        chain.submit(voter, "blindvote", "delegate", h_blinded=ballot[2])
    stranger = chain.create_identity()
    refused = chain.submit(stranger, "blindvote", "delegate", h_blinded=5)
    chain.advance_block()
    assert refused.reason == "NotVoter"

    bad = chain.submit(admin, "blindvote", "blind_sign", voter=election.voters[0], s_blinded=12345)
    for voter, ballot in zip(election.voters, ballots):
        chain.submit(admin, "blindvote", "blind_sign", voter=voter, s_blinded=sign(ballot[2], ADMIN_KEY))
    chain.advance_block()
    assert bad.reason == "InvalidSignature"

    relays = [chain.create_identity(owner="relay", pseudonym=True) for _ in range(6)]
    signatures = []
    for relay, voter, ballot in zip(relays, election.voters, ballots):
        key, r, _, _, c, sc = ballot
        s = unblind(contract.record(voter).blind_signature, r, ADMIN_KEY.n)
        signatures.append(s)
        chain.submit(relay, "blindvote", "commit", n_i=key.n, e_i=key.e, s_i=s, c_i=c, sc_i=sc)
    key, _, _, _, c, sc = ballots[0]
    replay = chain.submit(relays[2], "blindvote", "commit", n_i=key.n, e_i=key.e, s_i=signatures[0], c_i=c, sc_i=sc)
    chain.advance_block()
    assert replay.reason == "Reuse"
    assert len(contract.commitments) == 2

    wrong = chain.submit(relays[3], "blindvote", "reveal", c_i=ballots[0][4], v_i="no", x_i=ballots[0][3])
    for relay, ballot, vote in zip(relays[4:], ballots, ["yes", "no"]):
        chain.submit(relay, "blindvote", "reveal", c_i=ballot[4], v_i=vote, x_i=ballot[3])
    twice = chain.submit(relays[3], "blindvote", "reveal", c_i=ballots[1][4], v_i="no", x_i=ballots[1][3])
    chain.advance_block()
    assert wrong.reason == "BadOpening"
    assert twice.reason == "AlreadyRevealed"
    assert contract.tally == {"yes": 1, "no": 1}

    for voter in election.voters:
        chain.submit(voter, "blindvote", "voter_refund")
    chain.submit(admin, "blindvote", "admin_refund")
    chain.advance_block()
    assert [chain.balance_of(voter) for voter in election.voters] == [80, 80]
    assert chain.balance_of(admin) == DELTA
    assert sum(chain.balance_of(relay) for relay in relays) == 4 * RHO
    assert chain.contract_balances["blindvote"] == 0


def signed_ballots(election: Election, votes: list[str]) -> list[tuple]:
    chain, admin = election.chain, election.admin
    election.call(admin, "initiate", n=ADMIN_KEY.n, e=ADMIN_KEY.e)
    ballots = [full_ballot(vote, 10 * index) for index, vote in enumerate(votes)]
    for voter, ballot in zip(election.voters, ballots):
        chain.submit(voter, "blindvote", "delegate", h_blinded=ballot[2])
    chain.advance_block()
    return ballots


def relay_commit(election: Election, key, s: int, c: bytes, sc: int):
    relay = election.chain.create_identity(owner="relay", pseudonym=True)
    election.chain.submit(relay, "blindvote", "commit", n_i=key.n, e_i=key.e, s_i=s, c_i=c, sc_i=sc)
    return relay


@pytest.mark.parametrize("rho, delta, share, remainder", [(10, 50, 110, 0), (45, 5, 71, 2)])
def test_refused_signature_after_paid_relays_splits_what_is_left(voting_chain, rho, delta, share, remainder):
    election = deploy(voting_chain, n=3, rho=rho, delta=delta)
    chain, contract, admin = election.chain, election.contract, election.admin
    register_all(election)
    ballots = signed_ballots(election, ["yes", "no", "yes"])
    for voter, ballot in zip(election.voters[:2], ballots):
        chain.submit(admin, "blindvote", "blind_sign", voter=voter, s_blinded=sign(ballot[2], ADMIN_KEY))
    chain.advance_block()

    relays = []
    for voter, ballot in zip(election.voters[:2], ballots):
        key, r, _, _, c, sc = ballot
        s = unblind(contract.record(voter).blind_signature, r, ADMIN_KEY.n)
        relays.append(relay_commit(election, key, s, c, sc))
    report = chain.submit(election.voters[2], "blindvote", "report_refused_signature", voter=election.voters[2])
    chain.advance_block()
    assert report.accepted
    assert contract.ledger.delta_remaining == delta - 2 * rho
    assert (contract.ledger.refund_share, contract.ledger.refund_remainder) == (share, remainder)

    for voter in election.voters:
        chain.submit(voter, "blindvote", "step4_refund")
    admin_refund = chain.submit(admin, "blindvote", "admin_refund")
    chain.advance_block()
    assert [chain.balance_of(voter) for voter in election.voters] == [share] * 3
    assert admin_refund.accepted == (remainder > 0)
    assert chain.balance_of(admin) == remainder
    assert sum(chain.balance_of(relay) for relay in relays) == 2 * rho
    assert chain.contract_balances["blindvote"] == 0
    assert chain.total_currency() == chain.minted


@pytest.mark.parametrize("rho, delta, share, remainder", [(10, 50, 110, 0), (40, 11, 45, 1)])
def test_over_commit_refunds_never_exceed_the_pool(voting_chain, rho, delta, share, remainder):
    election = deploy(voting_chain, rho=rho, delta=delta)
    chain, contract, admin = election.chain, election.contract, election.admin
    register_all(election)
    ballots = signed_ballots(election, ["yes", "no"])
    for voter, ballot in zip(election.voters, ballots):
        chain.submit(admin, "blindvote", "blind_sign", voter=voter, s_blinded=sign(ballot[2], ADMIN_KEY))
    chain.advance_block()

    relays = []
    for voter, ballot in zip(election.voters, ballots):
        key, r, _, _, c, sc = ballot
        s = unblind(contract.record(voter).blind_signature, r, ADMIN_KEY.n)
        relays.append(relay_commit(election, key, s, c, sc))
    extra_key, _, _, _, c, sc = full_ballot("yes", 99)
    s = sign(hash_public_key(extra_key.public, ADMIN_KEY.n), ADMIN_KEY)
    relays.append(relay_commit(election, extra_key, s, c, sc))
    chain.advance_block()
    assert contract.cancelled
    assert contract.ledger.delta_remaining == delta - 3 * rho
    assert (contract.ledger.refund_share, contract.ledger.refund_remainder) == (share, remainder)

    for voter in election.voters:
        chain.submit(voter, "blindvote", "step5_refund")
    chain.submit(admin, "blindvote", "admin_refund")
    late = chain.submit(election.voters[0], "blindvote", "step5_refund")
    chain.advance_block()
    assert late.reason == "AlreadyRefunded"
    assert [chain.balance_of(voter) for voter in election.voters] == [share, share]
    assert chain.balance_of(admin) == remainder
    assert sum(chain.balance_of(relay) for relay in relays) == 3 * rho
    assert chain.contract_balances["blindvote"] == 0
    assert chain.total_currency() == chain.minted


def test_report_needs_a_second_demand(voting_chain):
    election = deploy(voting_chain, offchain=True)
    chain, admin = election.chain, election.admin
    register_all(election)
    election.call(admin, "initiate", n=ADMIN_KEY.n, e=ADMIN_KEY.e)
    voter = election.voters[0]
    h_blinded = full_ballot("yes", 3)[2]
    channel = OffchainChannel(chain, admin)
    sigma = chain.sign_message(voter, delegation_message(h_blinded))
    channel.deliver(voter, h_blinded, sigma)
    channel.return_signature(voter, sign(h_blinded, ADMIN_KEY))
    assert channel.evidence(voter) == (h_blinded, sigma)

    second = blind(hash_public_key(keygen(64, random.Random(3)).public, ADMIN_KEY.n), 7, ADMIN_KEY.public)
    innocent = channel.report(voter, h_blinded, sigma)
    chain.submit(voter, "blindvote", "delegate", h_blinded=second)
    chain.advance_block()
    assert innocent.reason == "NotEligible"

    confiscated = channel.report(voter, h_blinded, sigma)
    chain.advance_block()
    assert confiscated.accepted
    assert chain.balance_of(admin) == FEE - 2 * RHO
    assert [penalty.kind for penalty in election.contract.penalties] == ["double_demand"]


def test_premature_variant_refuses_regular_commit(voting_chain):
    election = deploy(voting_chain, premature=True)
    chain = election.chain
    chain.advance_to(5)
    tx = election.call(election.voters[0], "commit", n_i=3233, e_i=17, s_i=1, c_i=b"0" * 32, sc_i=1)
    assert tx.reason == "WrongVariant"


def test_ranked_reducer_counts_first_preferences():
    assert ranked_first_choice(["A>B>C", "B>A", "A", " C > A"]) == {"A": 2, "B": 1, "C": 1}


@pytest.mark.parametrize("n", [3, 10, 50])
def test_honest_elections_of_any_size_balance_out(n, settings):
    rng = random.Random(n)
    votes = [rng.choice(["yes", "no", "abstain"]) for _ in range(n)]
    voters = [VoterSpec(f"v{index}", vote) for index, vote in enumerate(votes)]
    result = run(Scenario(protocol="blindvote", variant="onchain", voters=voters), settings, seed=n)
    assert result.failures == []
    chain = result.run.chain
    assert result.run.contract.tally == expected_tally(votes)
    assert [chain.balance_of(ballot.address) for ballot in result.run.ballots] == [FEE - 2 * RHO] * n
    admin = [identity for identity in chain.identities.values() if identity.owner == "admin"]
    assert sum(chain.balance_of(identity) for identity in admin) == DELTA
    assert chain.contract_balances["blindvote"] == 0
