"""Scripted principal behaviors.

A policy is a bundle of behavior flags; runners consult the flags at each
decision point instead of branching on policy names.
"""
from __future__ import annotations

from dataclasses import dataclass

from services.errors import InvalidScenario

VOTER = "voter"
ADMIN = "admin"
BIDDER = "bidder"


@dataclass(frozen=True)
class Policy:
    name: str
    roles: frozenset[str]
    participates: bool = True
    uses_relays: bool = True
    double_demand: bool = False
    signs: bool = True
    signs_offchain: bool = True
    extra_signature: bool = False
    guides_path: bool = True
    reveals: bool = True
    spurious_right: bool = False

    @property
    def honest(self) -> bool:
        return self.name == "honest"


POLICIES: dict[str, Policy] = {
    policy.name: policy
    for policy in (
        Policy("honest", frozenset({VOTER, ADMIN, BIDDER})),
        Policy("silent", frozenset({VOTER, BIDDER}), participates=False, guides_path=False, reveals=False),
        Policy("self-relay", frozenset({VOTER}), uses_relays=False),
        Policy("double-demand", frozenset({VOTER}), double_demand=True),
        Policy("refuse-sign", frozenset({ADMIN}), signs=False, signs_offchain=False),
        Policy("over-sign", frozenset({ADMIN}), extra_signature=True),
        Policy("offchain-refuse", frozenset({ADMIN}), signs_offchain=False),
        Policy("spurious-right", frozenset({BIDDER}), spurious_right=True),
        Policy("no-reveal", frozenset({BIDDER}), reveals=False),
    )
}


def get_policy(name: str, role: str) -> Policy:
    policy = POLICIES.get(name)
    if policy is None:
        raise InvalidScenario(f"unknown policy {name!r}; expected one of {sorted(POLICIES)}")
    if role not in policy.roles:
        raise InvalidScenario(f"policy {name!r} does not apply to a {role}")
    return policy
