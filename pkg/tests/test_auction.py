from __future__ import annotations

import random

import pytest
from hypothesis import given, settings, strategies as st

from harness.runner import run
from harness.scenario import Scenario
from harness.stats import check_restarts

from services.auction import (
    AuctionConfig,
    AuctionContract,
    BatCursor,
    Variant,
    bat_children,
    bat_depth,
    brute_force_winner,
    select_fake_bidders,
)
from services.crypto import commitment
from services.errors import BadConfig, Leaf, TooFewBidders
from services.simchain import Chain, Identity
from services.state import LabSettings


def test_tree_splits():
    assert bat_children(1, 15) == ((1, 8), (9, 15))
    assert bat_children(9, 15) == ((9, 12), (13, 15))
    assert bat_children(11, 12) == ((11, 11), (12, 12))
    with pytest.raises(Leaf):
        bat_children(4, 4)
    assert [bat_depth(m) for m in (1, 2, 15, 16, 17, 64)] == [0, 1, 4, 4, 5, 6]


def test_path_to_twelve_uses_one_implicit_left():
    cursor = BatCursor.root(15)
    cursor.right()
    assert cursor.interval == (9, 15)
    cursor.catch_up(3)
    assert cursor.interval == (9, 12)
    cursor.right()
    cursor.right()
    assert cursor.is_leaf and cursor.x == 12
    assert cursor.step == 4


@given(data=st.data(), m=st.integers(min_value=1, max_value=500))
def test_walk_reaches_any_value_within_depth(data, m):
    target = data.draw(st.integers(min_value=1, max_value=m))
    cursor = BatCursor.root(m)
    while not cursor.is_leaf:
        _, (lo, hi) = bat_children(cursor.x, cursor.y)
        if lo <= target <= hi:
            cursor.right()
        else:
            cursor.left()
    assert cursor.x == target
    assert cursor.step <= bat_depth(m)


def test_brute_force_winner_is_one_based():
    assert brute_force_winner([3, 12, 7]) == (12, {2})
    assert brute_force_winner([5, 1, 5]) == (5, {1, 3})


@given(rho=st.binary(min_size=32, max_size=32), n=st.integers(min_value=1, max_value=20), data=st.data())
def test_fake_selection_is_distinct(rho, n, data):
    f = data.draw(st.integers(min_value=0, max_value=n))
    chosen = select_fake_bidders(rho, f, n)
    assert len(set(chosen)) == f
    assert all(0 <= index < n for index in chosen)
    assert chosen == select_fake_bidders(rho, f, n)


def test_fake_selection_needs_enough_bidders():
    with pytest.raises(TooFewBidders):
        select_fake_bidders(b"r" * 32, 4, 3)


def test_config_validation():
    with pytest.raises(BadConfig):
        AuctionConfig(m=0, d=1).validate()
    with pytest.raises(BadConfig):
        AuctionConfig(m=8, d=1, variant=Variant.P3, f_fake=1).validate()
    AuctionConfig(m=8, d=1, variant=Variant.P3, f_fake=2).validate()


def deploy(chain: Chain, variant: Variant, bids: list[int], m: int = 15) -> tuple[AuctionContract, list[Identity]]:
    contract = AuctionContract()
    chain.add_contract("auction", contract)
    organizer = chain.create_identity(owner="organizer")
    chain.submit(organizer, "auction", "constructor", config=AuctionConfig(m=m, d=100, d_right=10, variant=variant))
    chain.advance_block()
    bidders = []
    for index, bid in enumerate(bids):
        bidder = chain.create_identity(owner=f"bidder:{index}")
        chain.mint(bidder, 1_000)
        h = None if variant is Variant.P0 else commitment(bid, f"n{index}")
        chain.submit(bidder, "auction", "register", 100, h=h)
        bidders.append(bidder)
    chain.advance_block()
    return contract, bidders


def test_registration_rules(auction_chain):
    contract, (bidder,) = deploy(auction_chain, Variant.P2, [5])
    late = auction_chain.submit(bidder, "auction", "register", 100, h=b"x")
    auction_chain.advance_block()
    assert late.reason == "WindowClosed"
    assert contract.registration_end == 2
    assert len(contract.bidders) == 1


def test_duplicate_and_uncommitted_registrations(auction_chain):
    contract = AuctionContract()
    auction_chain.add_contract("auction", contract)
    organizer = auction_chain.create_identity()
    auction_chain.submit(organizer, "auction", "constructor", config=AuctionConfig(m=15, d=100))
    auction_chain.advance_block()
    bidder = auction_chain.create_identity()
    auction_chain.mint(bidder, 300)
    first = auction_chain.submit(bidder, "auction", "register", 100, h=b"c")
    again = auction_chain.submit(bidder, "auction", "register", 100, h=b"c")
    bare = auction_chain.submit(auction_chain.create_identity(), "auction", "register", 0)
    auction_chain.advance_block()
    assert first.accepted
    assert again.reason == "DuplicateIdentity"
    assert bare.reason == "WrongDeposit"
    assert auction_chain.balance_of(bidder) == 200


def test_right_moves_and_repeats(auction_chain):
    contract, _ = deploy(auction_chain, Variant.P2, [12, 3])
    chain = auction_chain
    relay = chain.create_identity(owner="bidder:0", pseudonym=True)
    chain.mint(relay, 100)
    stale = chain.submit(relay, "auction", "right", 10, claimed=(9, 15))
    cheap = chain.submit(relay, "auction", "right", 5, claimed=(1, 15))
    moved = chain.submit(relay, "auction", "right", 10, claimed=(1, 15))
    repeat = chain.submit(relay, "auction", "right", 10, claimed=(1, 15))
    chain.advance_block()
    assert stale.reason == "StaleInterval"
    assert cheap.reason == "WrongDeposit"
    assert moved.accepted and repeat.accepted
    rnd = contract.current_round()
    assert rnd.cursor.interval == (9, 15)
    assert [move.effective for move in rnd.moves] == [True, False]
    assert chain.balance_of(relay) == 90
    assert contract.logical_cursor(chain.height + 2).interval == (9, 12)


def test_dutch_mismatch_slashes(auction_chain):
    contract, (bidder,) = deploy(auction_chain, Variant.P1, [5])
    tx = auction_chain.submit(bidder, "auction", "dutch_bid", n_b="n0")
    auction_chain.advance_block()
    assert tx.reason == "HashMismatch"
    assert contract.bidders[0].slashed
    assert auction_chain.burned == 100
    assert [penalty.kind for penalty in contract.penalties] == ["hash_mismatch"]


def test_dutch_countdown_offset(auction_chain):
    contract, bidders = deploy(auction_chain, Variant.P0, [3, 12, 7])
    auction_chain.advance_to(contract.registration_end + 3)
    tx = auction_chain.submit(bidders[1], "auction", "dutch_bid")
    auction_chain.advance_block()
    assert tx.accepted
    assert contract.outcome.bid == 12
    assert contract.outcome.offset == 15 - 12 + 1
    assert contract.phase_at(auction_chain.height + 1) == "refund"


def test_tree_functions_need_a_tree_variant(auction_chain):
    _, (bidder,) = deploy(auction_chain, Variant.P1, [5])
    tx = auction_chain.submit(bidder, "auction", "blame")
    auction_chain.advance_block()
    assert tx.reason == "WrongVariant"


def test_views_do_not_open_a_round(auction_chain):
    contract, _ = deploy(auction_chain, Variant.P2, [4, 12, 7])
    auction_chain.advance_block()
    assert contract.phase_at(auction_chain.height + 1) == "path"
    assert contract.current_round(auction_chain.height + 1).cursor.interval == (1, 15)
    assert contract.logical_cursor(auction_chain.height + 1).interval == (1, 8)
    assert contract.rounds == []
    assert contract.round is None


def test_rejected_bid_leaves_the_cursor(auction_chain):
    contract, (bidder,) = deploy(auction_chain, Variant.P2, [1])
    auction_chain.advance_to(contract.registration_end + bat_depth(15))
    wrong = auction_chain.submit(bidder, "auction", "bid", n_b="not-the-nonce")
    auction_chain.advance_block()
    assert wrong.reason == "HashMismatch"
    assert contract.round.cursor == BatCursor.root(15)
    assert contract.round.winner is None


def test_accepted_bid_settles_the_cursor_on_the_leaf(auction_chain):
    contract, (bidder,) = deploy(auction_chain, Variant.P2, [1])
    auction_chain.advance_to(contract.registration_end + bat_depth(15))
    wrong = auction_chain.submit(bidder, "auction", "bid", n_b="not-the-nonce")
    right = auction_chain.submit(bidder, "auction", "bid", n_b="n0")
    auction_chain.advance_block()
    assert wrong.reason == "HashMismatch"
    assert right.accepted
    assert contract.round.cursor.interval == (1, 1)
    assert (contract.outcome.winner, contract.outcome.bid) == (0, 1)


# randomized runs through the harness

LAB = LabSettings(seed=0)


@st.composite
def instances(draw, min_n: int = 1, min_m: int = 2):
    m = draw(st.integers(min_value=min_m, max_value=64))
    bids = draw(st.lists(st.integers(min_value=1, max_value=m), min_size=min_n, max_size=16))
    return m, bids


@settings(max_examples=200, deadline=None)
@given(instance=instances(), seed=st.integers(min_value=0, max_value=2**16))
def test_dutch_countdown_stops_at_the_first_top_bid(instance, seed):
    m, bids = instance
    result = run(Scenario(protocol="auction", variant="P1", config={"m": m}, bids=bids), LAB, seed=seed)
    assert result.failures == []
    outcome = result.run.outcome
    assert outcome.bid == max(bids)
    assert outcome.winner == bids.index(max(bids))
    assert outcome.offset == m - max(bids) + 1


@settings(max_examples=500, deadline=None)
@given(instance=instances(), seed=st.integers(min_value=0, max_value=2**16))
def test_bat_finds_the_maximum_in_one_block_per_level(instance, seed):
    m, bids = instance
    result = run(Scenario(protocol="auction", variant="P2", config={"m": m}, bids=bids), LAB, seed=seed)
    assert result.failures == []
    top, positions = brute_force_winner(bids)
    contract = result.run.contract
    assert result.run.outcome.bid == top
    assert result.run.outcome.winner + 1 in positions
    [rnd] = contract.rounds
    assert contract.path_end(rnd) - rnd.anchor == bat_depth(m)
    assert result.run.blocks_used() == bat_depth(m) + 1


@settings(max_examples=100, deadline=None)
@given(instance=instances(min_n=2), data=st.data())
def test_spurious_right_calls_cost_the_caller_and_keep_the_maximum(instance, data):
    m, bids = instance
    spurious = data.draw(st.integers(min_value=0, max_value=len(bids) - 1))
    scenario = Scenario(
        protocol="auction",
        variant="P2",
        config={"m": m, "d_right": 10},
        bids=bids,
        policies={spurious: "spurious-right"},
    )
    result = run(scenario, LAB, seed=data.draw(st.integers(min_value=0, max_value=2**16)))
    assert result.failures == []
    assert result.run.outcome.bid == max(bids)
    kinds = [penalty.kind for penalty in result.run.contract.penalties]
    assert set(kinds) <= {"blamed_right"}
    assert result.run.chain.burned == 10 * len(kinds)
    assert [bidder.index for bidder in result.run.bidders if bidder.blamed] == ([spurious] if kinds else [])


def test_fake_bid_restarts_stay_within_the_bound():
    rng = random.Random(2)
    observed = []
    for seed in range(500):
        m = rng.randint(4, 64)
        top = rng.randint((m + 1) // 2, m)
        bids = [top] + [rng.randint(1, top) for _ in range(rng.randint(1, 15))]
        rng.shuffle(bids)
        scenario = Scenario(protocol="auction", variant="P3", config={"m": m, "f_fake": 2}, bids=bids)
        result = run(scenario, LAB, seed=seed)
        assert result.failures == []
        assert result.run.outcome.bid == top
        observed.append((m, top, result.run.contract.restarts()))
    verdict = check_restarts(observed, 2)
    assert verdict.passed, verdict
