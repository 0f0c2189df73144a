from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from harness.policies import ADMIN, BIDDER, VOTER, get_policy
from services.auction import AuctionConfig, Variant
from services.errors import BadConfig, InvalidScenario

PROTOCOLS = ("blindvote", "auction")
VOTING_VARIANTS = ("onchain", "offchain", "premature")

VOTING_DEFAULTS: dict[str, Any] = {
    "fee": 100,
    "relay_reward": 10,
    "admin_deposit": 50,
    "window": 1,
    "reducer": "count",
}
AUCTION_DEFAULTS: dict[str, Any] = {
    "m": 15,
    "d": 100,
    "d_right": 10,
    "r": 1,
    "f_fake": 0,
    "reward_right": 0,
    "registration_units": 1,
    "reveal_units": 1,
    "fake_units": 1,
    # None draws honest call batches from [r, 2r]
    "right_call_spread": None,
}


@dataclass
class VoterSpec:
    name: str
    vote: str
    policy: str = "honest"
    delegate_to: str | None = None
    approved: bool = True


@dataclass
class Scenario:
    protocol: str
    variant: str
    name: str = "scenario"
    seed: int | None = None
    config: dict[str, Any] = field(default_factory=dict)
    voters: list[VoterSpec] = field(default_factory=list)
    admin_policy: str = "honest"
    refuse_target: int = 0
    relays: int = 2
    bids: list[int] = field(default_factory=list)
    policies: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["policies"] = {str(key): value for key, value in self.policies.items()}
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        try:
            scenario = cls(protocol=str(data["protocol"]), variant=str(data["variant"]))
        except KeyError as exc:
            raise InvalidScenario(f"missing field {exc.args[0]!r}") from None
        for key, value in data.items():
            if key in ("protocol", "variant") or not hasattr(scenario, key):
                continue
            setattr(scenario, key, value)
        try:
            scenario.voters = [
                voter if isinstance(voter, VoterSpec) else VoterSpec(**voter) for voter in scenario.voters
            ]
            scenario.policies = {int(key): str(value) for key, value in dict(scenario.policies).items()}
            scenario.bids = [int(bid) for bid in scenario.bids]
        except (TypeError, ValueError) as exc:
            raise InvalidScenario(f"malformed scenario: {exc}") from None
        return scenario

    # derived settings

    def voting_option(self, key: str) -> Any:
        return self.config.get(key, VOTING_DEFAULTS.get(key))

    def auction_option(self, key: str) -> Any:
        return self.config.get(key, AUCTION_DEFAULTS.get(key))

    def policy_of(self, index: int) -> str:
        return self.policies.get(index, "honest")

    def auction_config(self, blocks_per_unit: int = 1) -> AuctionConfig:
        return AuctionConfig(
            m=int(self.auction_option("m")),
            d=int(self.auction_option("d")),
            d_right=int(self.auction_option("d_right")),
            r=int(self.auction_option("r")),
            f_fake=int(self.auction_option("f_fake")),
            variant=Variant(self.variant),
            reward_right=int(self.auction_option("reward_right")),
            registration_units=int(self.auction_option("registration_units")),
            reveal_units=int(self.auction_option("reveal_units")),
            fake_units=int(self.auction_option("fake_units")),
            blocks_per_unit=blocks_per_unit,
        )

    def right_call_spread(self) -> int:
        spread = self.auction_option("right_call_spread")
        return int(self.auction_option("r")) if spread is None else int(spread)

    def with_bids(self, bids: list[int]) -> "Scenario":
        return replace(self, bids=list(bids), policies=dict(self.policies), config=dict(self.config))

    def with_votes(self, votes: list[str]) -> "Scenario":
        voters = [replace(voter, vote=vote) for voter, vote in zip(self.voters, votes)]
        return replace(self, voters=voters, config=dict(self.config), policies=dict(self.policies))

    def with_voters(self, n: int) -> "Scenario":
        """Scale to n honest voters, cycling through the existing votes."""
        votes = [voter.vote for voter in self.voters] or ["yes", "no"]
        voters = [VoterSpec(name=f"v{index}", vote=votes[index % len(votes)]) for index in range(n)]
        config = {key: value for key, value in self.config.items() if key != "n_max"}
        return replace(self, voters=voters, config=config, policies=dict(self.policies))

    # validation

    def validate(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise InvalidScenario(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.protocol == "blindvote":
            self._validate_voting()
        else:
            self._validate_auction()

    def _validate_voting(self) -> None:
        if self.variant not in VOTING_VARIANTS:
            raise InvalidScenario(f"blindvote variant must be one of {VOTING_VARIANTS}")
        get_policy(self.admin_policy, ADMIN)
        names = [voter.name for voter in self.voters]
        if len(set(names)) != len(names):
            raise InvalidScenario("voter names must be unique")
        for voter in self.voters:
            policy = get_policy(voter.policy, VOTER)
            if policy.double_demand and self.variant != "offchain":
                raise InvalidScenario("double-demand needs off-chain signing")
            if voter.delegate_to and self.variant == "premature":
                raise InvalidScenario("premature commitment rules out delegating the vote")
        for key in ("fee", "relay_reward", "admin_deposit", "window"):
            value = self.voting_option(key)
            if not isinstance(value, int) or value < 0:
                raise InvalidScenario(f"{key} must be a non-negative integer")
        if self.voting_option("window") < 1:
            raise InvalidScenario("window must be at least one unit")
        if self.voting_option("fee") < 2 * self.voting_option("relay_reward"):
            raise InvalidScenario("fee must cover two relay rewards")
        if self.voting_option("reducer") not in ("count", "ranked"):
            raise InvalidScenario("reducer must be 'count' or 'ranked'")
        if self.relays < 1:
            raise InvalidScenario("at least one relay is required")
        if self.voters and not 0 <= self.refuse_target < len(self.voters):
            raise InvalidScenario("refuse_target must index a voter")
        delegates = {voter.delegate_to for voter in self.voters if voter.delegate_to}
        delegate_votes = self.config.get("delegate_votes", {})
        if not isinstance(delegate_votes, dict) or not set(delegate_votes) <= delegates:
            raise InvalidScenario(f"delegate_votes must map delegates {sorted(delegates)} to votes")

    def _validate_auction(self) -> None:
        if self.variant not in {variant.value for variant in Variant}:
            raise InvalidScenario(f"auction variant must be one of P0..P3, got {self.variant!r}")
        try:
            config = self.auction_config()
            config.validate()
            spread = self.right_call_spread()
        except (BadConfig, TypeError, ValueError) as exc:
            raise InvalidScenario(f"auction config: {exc}") from None
        if not self.bids:
            raise InvalidScenario("an auction needs at least one bid")
        for bid in self.bids:
            if not 1 <= bid <= config.m:
                raise InvalidScenario(f"bid {bid} outside [1, {config.m}]")
        if config.variant is Variant.P3 and config.f_fake > len(self.bids):
            raise InvalidScenario(f"f_fake={config.f_fake} exceeds {len(self.bids)} bidders")
        if spread < 0:
            raise InvalidScenario("right_call_spread must be non-negative")
        for index, name in self.policies.items():
            if not 0 <= index < len(self.bids):
                raise InvalidScenario(f"policy for unknown bidder {index}")
            get_policy(name, BIDDER)


def load_scenario(path: Path | str) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidScenario(f"cannot read scenario {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidScenario(f"scenario {path} is not a JSON object")
    scenario = Scenario.from_dict(data)
    scenario.validate()
    return scenario


def parse_bids(text: str) -> list[int]:
    """Parse "4,12,7" or "[4, 12, 7]"."""
    cleaned = text.strip().strip("[]")
    try:
        return [int(part) for part in cleaned.split(",") if part.strip()]
    except ValueError:
        raise InvalidScenario(f"bids must be comma-separated integers, got {text!r}") from None
