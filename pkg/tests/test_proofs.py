from __future__ import annotations

import pickle
import random

import pytest
from hypothesis import given, strategies as st

from services.crypto import commitment
from services.errors import UnknownToken
from services.proofs import LessThan, ProofRegistry, ProofToken, compute_fake_bid

RHO = bytes(range(32))


@given(bid=st.integers(min_value=1, max_value=100), bound=st.integers(min_value=1, max_value=100))
def test_less_than_is_sound(bid, bound):
    registry = ProofRegistry("t")
    h = commitment(bid, "n")
    token = registry.prove_less_than(bid, "n", h, bound)
    assert registry.verify(token) is (bid < bound)


def test_many_witnesses_verify_and_perturbed_ones_do_not():
    rng = random.Random(10)
    registry = ProofRegistry("sweep")
    for index in range(10_000):
        bid = rng.randint(1, 64)
        bound = rng.randint(bid + 1, 65)
        nonce = f"n{index}"
        h = commitment(bid, nonce)
        assert registry.verify(registry.prove_less_than(bid, nonce, h, bound))
        perturbed = [
            registry.prove_less_than(bid, nonce + "x", h, bound),
            registry.prove_less_than(bid + 1, nonce, h, bound + 1),
            registry.prove_less_than(bid, nonce, h, bid),
        ]
        assert not any(registry.verify(token) for token in perturbed)


def test_less_than_needs_the_committed_bid():
    registry = ProofRegistry()
    h = commitment(9, "n")
    assert not registry.verify(registry.prove_less_than(3, "n", h, 5))


def test_fake_bid_statement():
    registry = ProofRegistry()
    claimed = compute_fake_bid(RHO, "nonce", 15)
    assert 1 <= claimed <= 15
    h = commitment(4, "nonce")
    assert registry.verify(registry.prove_fake_bid("nonce", RHO, 15, claimed, bid=4, h=h))
    assert not registry.verify(registry.prove_fake_bid("nonce", RHO, 15, claimed % 15 + 1))
    assert not registry.verify(registry.prove_fake_bid("nonce", RHO, 15, claimed, bid=5, h=h))


def test_forged_tokens_are_rejected():
    registry = ProofRegistry("a")
    other = ProofRegistry("b")
    token = other.prove_less_than(1, "n", commitment(1, "n"), 2)
    with pytest.raises(UnknownToken):
        registry.verify(token)
    assert not registry.accepts(token)
    assert not registry.accepts(ProofToken(LessThan(b"x", 2), "made-up"))
    assert not registry.accepts("not a token")


def test_transcript_carries_only_statements():
    registry = ProofRegistry()
    registry.verify(registry.prove_less_than(3, "secret-nonce", commitment(3, "secret-nonce"), 5))
    [(view, verdict)] = registry.transcript()
    assert verdict is True
    assert "secret-nonce" not in repr(view)
    assert view["kind"] == "LessThan"


def test_tokens_cannot_be_pickled():
    registry = ProofRegistry()
    token = registry.prove_less_than(1, "n", commitment(1, "n"), 2)
    with pytest.raises(TypeError):
        pickle.dumps(token)
