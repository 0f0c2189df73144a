from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any

from services.simchain import Chain, Identity


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str = ""


def expect(name: str, actual: Any, expected: Any) -> Check:
    if actual == expected:
        return Check(name, True)
    return Check(name, False, f"expected {expected!r}, got {actual!r}")


def conservation(chain: Chain) -> Check:
    return expect("conservation", chain.total_currency(), chain.minted)


class Purse:
    """Tracks what the harness minted per principal so net changes can be checked."""

    def __init__(self, chain: Chain) -> None:
        self.chain = chain
        self.funded: Counter[str] = Counter()

    def fund(self, identity: Identity, amount: int) -> None:
        self.chain.mint(identity, amount)
        self.funded[identity.owner or identity.id] += amount

    def identities(self, owner: str) -> list[Identity]:
        return [identity for identity in self.chain.identities.values() if identity.owner == owner]

    def net(self, owner: str) -> int:
        held = sum(self.chain.balance_of(identity) for identity in self.identities(owner))
        return held - self.funded[owner]

    def fees(self, owner: str) -> int:
        return sum(self.chain.fees_paid[identity.id] for identity in self.identities(owner))
