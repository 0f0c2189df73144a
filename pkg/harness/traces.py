"""Observer projections of a chain log.

Projections never carry identity ownership, witness material or opaque
cryptographic arguments. Identities are relabeled by first appearance so
two runs can be compared by plain equality.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import groupby
from typing import Any, Iterable

from services.simchain import Chain, Identity, Transaction

SELF = "self"
IDENTITY_PREFIX = "@"

# arguments that stay visible in the vote-secrecy projection
VISIBLE_VOTE_ARGS = {
    "reveal": ("v_i",),
    "approve": ("voter",),
    "blind_sign": ("voter",),
    "report": ("voter",),
    "report_refused_signature": ("voter",),
}


@dataclass(frozen=True)
class TraceEvent:
    block: int
    function: str
    accepted: bool
    sender: str
    args: tuple[tuple[str, Any], ...] = ()


@dataclass
class ObservationTrace:
    observer: str
    events: list[TraceEvent] = field(default_factory=list)
    own_actions: list[TraceEvent] = field(default_factory=list)

    def canonical(self) -> list[tuple]:
        return canonicalize(self.events)

    def canonical_own(self) -> list[tuple]:
        return canonicalize(self.own_actions)

    def to_json(self) -> str:
        return json.dumps(
            {"observer": self.observer, "events": self.canonical(), "own_actions": self.canonical_own()},
            sort_keys=True,
        )


def _label(identity: Identity, observer: Identity | None) -> str:
    if observer is not None and identity == observer:
        return SELF
    return IDENTITY_PREFIX + identity.id


def canonicalize(events: Iterable[TraceEvent]) -> list[tuple]:
    """Rename identities to id0, id1, ... in order of first appearance."""
    names: dict[str, str] = {}

    def rename(value: Any) -> Any:
        if isinstance(value, str) and value.startswith(IDENTITY_PREFIX):
            return names.setdefault(value, f"id{len(names)}")
        return value

    rows = []
    for event in events:
        sender = rename(event.sender)
        args = tuple((key, rename(value)) for key, value in event.args)
        rows.append((event.block, event.function, event.accepted, sender, args))
    return rows


def _contract_log(chain: Chain, contract: str) -> list[Transaction]:
    return [tx for tx in chain.log if tx.call.contract == contract]


def observe_auction(
    chain: Chain,
    contract: str,
    observer: str,
    identity: Identity | None = None,
) -> ObservationTrace:
    """What `observer` sees: every call with its validity bit, plus its own submissions."""
    trace = ObservationTrace(observer=observer)
    for tx in _contract_log(chain, contract):
        event = TraceEvent(tx.block or 0, tx.function, tx.accepted, _label(tx.sender, identity))
        trace.events.append(event)
        if identity is not None and tx.sender.owner == identity.owner:
            own_sender = SELF if tx.sender == identity else "pseudonym"
            trace.own_actions.append(TraceEvent(tx.block or 0, tx.function, tx.accepted, own_sender))
    return trace


def _visible_args(tx: Transaction) -> tuple[tuple[str, Any], ...]:
    visible = []
    for key in VISIBLE_VOTE_ARGS.get(tx.function, ()):
        value = tx.call.kwargs.get(key)
        if isinstance(value, Identity):
            value = IDENTITY_PREFIX + value.id
        elif isinstance(value, bytes):
            value = value.hex()
        visible.append((key, value))
    return tuple(visible)


def observe_votes(chain: Chain, contract: str, observer: str = "outside") -> ObservationTrace:
    """Vote-secrecy projection: opaque arguments dropped, each block in canonical order."""
    events = [
        TraceEvent(tx.block or 0, tx.function, tx.accepted, IDENTITY_PREFIX + tx.sender.id, _visible_args(tx))
        for tx in _contract_log(chain, contract)
    ]
    ordered: list[TraceEvent] = []
    for _, block_events in groupby(events, key=lambda event: event.block):
        ordered.extend(sorted(block_events, key=lambda event: (event.function, repr(event.args), event.accepted)))
    return ObservationTrace(observer=observer, events=ordered)


def first_divergence(left: list[tuple], right: list[tuple]) -> tuple[int, tuple | None, tuple | None] | None:
    for position in range(max(len(left), len(right))):
        a = left[position] if position < len(left) else None
        b = right[position] if position < len(right) else None
        if a != b:
            return position, a, b
    return None
