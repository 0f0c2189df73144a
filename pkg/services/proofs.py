"""Simulated designated-verifier proofs.

Stand-in for the succinct proofs of the auction protocols: a prover
registers a witness with the run-local `ProofRegistry` and receives an
opaque `ProofToken`. Verification evaluates the statement predicate
against the registered witness. Only the statement and the validity bit
ever leave the registry.
"""
from __future__ import annotations

import hashlib
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Union

from services.crypto import commitment, digest
from services.errors import UnknownToken

logger = logging.getLogger(__name__)


def fake_rand(rho: bytes, nonce: bytes | str | int) -> int:
    """rand(rho, n) instantiated as SHA-256 over (rho, n)."""
    return int.from_bytes(digest(rho, nonce), "big")


def compute_fake_bid(rho: bytes, nonce: bytes | str | int, m: int) -> int:
    if m < 1:
        raise ValueError("m must be at least 1")
    return fake_rand(rho, nonce) % m + 1


@dataclass(frozen=True)
class LessThan:
    commitment: bytes
    bound: int

    def public_view(self) -> dict[str, Any]:
        return {"kind": "LessThan", "commitment": self.commitment.hex(), "bound": self.bound}


@dataclass(frozen=True)
class FakeBidCorrect:
    rho: bytes
    m: int
    claimed: int
    commitment: bytes | None = None

    def public_view(self) -> dict[str, Any]:
        view: dict[str, Any] = {"kind": "FakeBidCorrect", "rho": self.rho.hex(), "m": self.m, "claimed": self.claimed}
        if self.commitment is not None:
            view["commitment"] = self.commitment.hex()
        return view


Statement = Union[LessThan, FakeBidCorrect]


@dataclass(frozen=True)
class ProofToken:
    statement: Statement
    token: str

    def public_view(self) -> dict[str, Any]:
        return {"statement": self.statement.public_view(), "token": self.token}

    def __reduce__(self):
        raise TypeError("proof tokens are run-local and cannot be serialized")


@dataclass(frozen=True)
class _Witness:
    bid: int | None
    nonce: bytes | str | int


class ProofRegistry:
    """Append-only witness store; one per run."""

    def __init__(self, label: str = "") -> None:
        self._label = label
        self._counter = itertools.count(1)
        self._witnesses: dict[str, tuple[Statement, _Witness]] = {}
        self._verdicts: list[tuple[dict[str, Any], bool]] = []

    def _register(self, statement: Statement, witness: _Witness) -> ProofToken:
        index = next(self._counter)
        handle = hashlib.sha256(f"{self._label}:{index}".encode("utf-8")).hexdigest()[:24]
        self._witnesses[handle] = (statement, witness)
        return ProofToken(statement=statement, token=handle)

    def prove_less_than(self, bid: int, nonce: bytes | str | int, h: bytes, bound: int) -> ProofToken:
        return self._register(LessThan(commitment=h, bound=bound), _Witness(bid=bid, nonce=nonce))

    def prove_fake_bid(
        self,
        nonce: bytes | str | int,
        rho: bytes,
        m: int,
        claimed: int,
        bid: int | None = None,
        h: bytes | None = None,
    ) -> ProofToken:
        statement = FakeBidCorrect(rho=rho, m=m, claimed=claimed, commitment=h)
        return self._register(statement, _Witness(bid=bid, nonce=nonce))

    def verify(self, token: ProofToken) -> bool:
        entry = self._witnesses.get(token.token)
        if entry is None or entry[0] != token.statement:
            raise UnknownToken(token.token)
        statement, witness = entry
        result = _holds(statement, witness)
        self._verdicts.append((statement.public_view(), result))
        return result

    def accepts(self, token: Any) -> bool:
        """Contract-facing check: forged or missing tokens are false."""
        if not isinstance(token, ProofToken):
            return False
        try:
            return self.verify(token)
        except UnknownToken:
            logger.warning("rejecting unregistered proof token %s", token.token)
            return False

    def transcript(self) -> list[tuple[dict[str, Any], bool]]:
        return list(self._verdicts)


def _holds(statement: Statement, witness: _Witness) -> bool:
    if isinstance(statement, LessThan):
        if witness.bid is None:
            return False
        return witness.bid < statement.bound and commitment(witness.bid, witness.nonce) == statement.commitment
    if statement.m < 1 or compute_fake_bid(statement.rho, witness.nonce, statement.m) != statement.claimed:
        return False
    if statement.commitment is None:
        return True
    return witness.bid is not None and commitment(witness.bid, witness.nonce) == statement.commitment
