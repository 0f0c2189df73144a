"""Deterministic simulated blockchain.

A `Chain` owns the block clock, the mempool, balances, contract-held
deposits, gas metering and the per-block randomness beacon. Contracts are
plain Python objects registered by name; every call reaches them through
`submit` + `advance_block`, so execution is a pure function of the prior
state and the ordered transactions.
"""
from __future__ import annotations

import hashlib
import hmac
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field, fields, is_dataclass
from enum import Enum
from typing import Any, Iterable, Sequence

from services.costs import CostModel
from services.errors import (
    ContractError,
    FutureBlock,
    InsufficientBalance,
    UnknownContract,
)

logger = logging.getLogger(__name__)

Schedule = Sequence[tuple[int, int]]


@dataclass(frozen=True)
class Identity:
    id: str
    is_pseudonym: bool = False
    # Harness-only link to the controlling principal; never projected.
    owner: str | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    contract: str
    function: str
    kwargs: dict[str, Any] = field(default_factory=dict, hash=False)


@dataclass
class Transaction:
    seq: int
    sender: Identity
    call: Call
    attached_value: int
    block: int | None = None
    status: str = "pending"
    reason: str | None = None
    gas: int = 0

    @property
    def accepted(self) -> bool:
        return self.status == "accepted"

    @property
    def function(self) -> str:
        return self.call.function


@dataclass(frozen=True)
class TxRecord:
    seq: int
    block: int
    sender: str
    contract: str
    function: str
    args: str
    attached_value: int
    status: str
    reason: str | None
    gas: int


@dataclass(frozen=True)
class ChainState:
    """Immutable snapshot of a chain; safe to hand across threads."""

    height: int
    ledger: tuple[tuple[str, int], ...]
    deposits: tuple[tuple[str, int], ...]
    log: tuple[TxRecord, ...]
    beacon: tuple[tuple[int, str], ...]
    escrow: int
    fee_sink: int
    burned: int
    minted: int

    def balance(self, identity: Identity | str) -> int:
        key = identity.id if isinstance(identity, Identity) else identity
        return dict(self.ledger).get(key, 0)

    def total_currency(self) -> int:
        return (
            sum(value for _, value in self.ledger)
            + sum(value for _, value in self.deposits)
            + self.escrow
            + self.fee_sink
            + self.burned
        )

    def state_hash(self) -> str:
        payload = json.dumps(
            {
                "height": self.height,
                "ledger": self.ledger,
                "deposits": self.deposits,
                "log": [record.__dict__ for record in self.log],
                "beacon": self.beacon,
                "escrow": self.escrow,
                "fee_sink": self.fee_sink,
                "burned": self.burned,
                "minted": self.minted,
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def canonical(value: Any) -> Any:
    """JSON-friendly rendering of call arguments."""
    if isinstance(value, Identity):
        return value.id
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (list, tuple)):
        return [canonical(item) for item in value]
    if isinstance(value, dict):
        return {str(key): canonical(item) for key, item in sorted(value.items())}
    if hasattr(value, "public_view"):
        return canonical(value.public_view())
    if isinstance(value, Enum):
        return canonical(value.value)
    if is_dataclass(value) and not isinstance(value, type):
        return {item.name: canonical(getattr(value, item.name)) for item in fields(value)}
    if isinstance(value, (set, frozenset)):
        return sorted(canonical(item) for item in value)
    if isinstance(value, int) and not isinstance(value, bool) and abs(value) > 2**53:
        return str(value)
    return value


def in_window(height: int, step_index: int, schedule: Schedule) -> bool:
    start, end = schedule[step_index]
    return start <= height <= end


def active_step(height: int, schedule: Schedule) -> int | None:
    for index in range(len(schedule)):
        if in_window(height, index, schedule):
            return index
    return None


def derive(seed: int, *labels: Any) -> bytes:
    """Domain-separated SHA-256 over the run seed and labels."""
    digest = hashlib.sha256()
    for part in (seed, *labels):
        encoded = str(part).encode("utf-8")
        digest.update(len(encoded).to_bytes(4, "big"))
        digest.update(encoded)
    return digest.digest()


def rng_for(seed: int, *labels: Any) -> random.Random:
    """Independent deterministic stream for harness-side randomness."""
    return random.Random(int.from_bytes(derive(seed, "stream", *labels)[:8], "big"))


class CallContext:
    """What a contract sees while one transaction executes."""

    def __init__(self, chain: "Chain", tx: Transaction, contract_name: str) -> None:
        self.chain = chain
        self.tx = tx
        self.contract_name = contract_name

    @property
    def sender(self) -> Identity:
        return self.tx.sender

    @property
    def value(self) -> int:
        return self.tx.attached_value

    @property
    def height(self) -> int:
        return self.chain.height

    @property
    def seq(self) -> int:
        return self.tx.seq

    def pay(self, to: Identity, amount: int) -> None:
        self.chain._move_from_contract(self.contract_name, to.id, amount)

    def burn(self, amount: int) -> None:
        self.chain._burn_from_contract(self.contract_name, amount)

    def held(self) -> int:
        return self.chain.contract_balances.get(self.contract_name, 0)


class UnknownContractFunction(ContractError):
    pass


@dataclass(frozen=True)
class Penalty:
    block: int
    party: str
    kind: str
    amount: int


class Contract:
    """Base for simulated contracts; public functions take a CallContext first."""

    functions: frozenset[str] = frozenset()

    def __init__(self) -> None:
        self.penalties: list[Penalty] = []

    def record_penalty(self, ctx: CallContext, party: Identity, kind: str, amount: int) -> None:
        self.penalties.append(Penalty(block=ctx.height, party=party.id, kind=kind, amount=amount))

    def execute(self, ctx: CallContext, function: str, kwargs: dict[str, Any]) -> Any:
        if function not in self.functions:
            raise UnknownContractFunction(function)
        return getattr(self, function)(ctx, **kwargs)


class Chain:
    def __init__(
        self,
        seed: int,
        cost_model: CostModel,
        gas_policy: str = "min",
        gas_price: int = 0,
        blocks_per_unit: int = 1,
    ) -> None:
        self.seed = seed
        self.cost_model = cost_model
        self.gas_policy = gas_policy
        self.gas_price = gas_price
        self.blocks_per_unit = max(1, int(blocks_per_unit))
        self.height = 0
        self.balances: dict[str, int] = {}
        self.identities: dict[str, Identity] = {}
        self.contracts: dict[str, Contract] = {}
        self.contract_balances: dict[str, int] = {}
        self.escrow = 0
        self.fee_sink = 0
        self.burned = 0
        self.minted = 0
        self.log: list[Transaction] = []
        self.mempool: list[Transaction] = []
        self.beacon: dict[int, bytes] = {0: derive(seed, "beacon", 0)}
        self.gas_by_sender: Counter[str] = Counter()
        self.gas_by_function: Counter[str] = Counter()
        self.calls_by_function: Counter[str] = Counter()
        self.fees_paid: Counter[str] = Counter()
        self._next_seq = 0
        self._identity_counter = 0

    # identities and currency

    def create_identity(self, owner: str | None = None, pseudonym: bool = False) -> Identity:
        while True:
            self._identity_counter += 1
            token = "0x" + derive(self.seed, "identity", self._identity_counter).hex()[:16]
            if token not in self.identities:
                break
        identity = Identity(id=token, is_pseudonym=pseudonym, owner=owner)
        self.identities[token] = identity
        self.balances.setdefault(token, 0)
        return identity

    def mint(self, identity: Identity, amount: int) -> None:
        if amount < 0:
            raise ValueError("mint amount must be non-negative")
        self.balances[identity.id] = self.balances.get(identity.id, 0) + amount
        self.minted += amount

    def transfer(self, source: Identity, target: Identity, amount: int) -> None:
        """Off-chain funding of a pseudonym; models a mixer at no cost."""
        if amount < 0:
            raise ValueError("transfer amount must be non-negative")
        balance = self.balances.get(source.id, 0)
        if balance < amount:
            raise InsufficientBalance(f"{source.id} holds {balance}, needs {amount}")
        self.balances[source.id] = balance - amount
        self.balances[target.id] = self.balances.get(target.id, 0) + amount

    def balance_of(self, identity: Identity | str) -> int:
        key = identity.id if isinstance(identity, Identity) else identity
        return self.balances.get(key, 0)

    def total_currency(self) -> int:
        return (
            sum(self.balances.values())
            + sum(self.contract_balances.values())
            + self.escrow
            + self.fee_sink
            + self.burned
        )

    def sign_message(self, identity: Identity, payload: bytes) -> bytes:
        key = derive(self.seed, "auth-key", identity.id)
        return hmac.new(key, payload, hashlib.sha256).digest()

    def verify_message(self, identity: Identity, payload: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign_message(identity, payload), signature)

    # contracts and transactions

    def add_contract(self, name: str, contract: Contract) -> None:
        self.contracts[name] = contract
        self.contract_balances.setdefault(name, 0)

    def submit(
        self,
        sender: Identity,
        contract: str,
        function: str,
        attached_value: int = 0,
        **kwargs: Any,
    ) -> Transaction:
        if attached_value < 0:
            raise ValueError("attached value must be non-negative")
        balance = self.balances.get(sender.id, 0)
        if balance < attached_value:
            raise InsufficientBalance(f"{sender.id} holds {balance}, needs {attached_value}")
        self.balances[sender.id] = balance - attached_value
        self.escrow += attached_value
        tx = Transaction(
            seq=self._next_seq,
            sender=sender,
            call=Call(contract=contract, function=function, kwargs=dict(kwargs)),
            attached_value=attached_value,
        )
        self._next_seq += 1
        self.mempool.append(tx)
        return tx

    def pending(self, contract: str | None = None, function: str | None = None) -> list[Transaction]:
        return [
            tx
            for tx in self.mempool
            if (contract is None or tx.call.contract == contract)
            and (function is None or tx.call.function == function)
        ]

    def advance_block(self) -> ChainState:
        self.height += 1
        self.beacon[self.height] = derive(self.seed, "beacon", self.height)
        batch, self.mempool = sorted(self.mempool, key=lambda tx: tx.seq), []
        for tx in batch:
            tx.block = self.height
            self._execute(tx)
            self.log.append(tx)
        return self.snapshot()

    def advance_to(self, height: int) -> ChainState:
        while self.height < height:
            self.advance_block()
        return self.snapshot()

    def beacon_output(self, height: int) -> bytes:
        if height > self.height or height < 0:
            raise FutureBlock(f"beacon for block {height} requested at height {self.height}")
        return self.beacon[height]

    def charge(self, sender: Identity, function: str, entropy_label: Any = None) -> int:
        entropy = int.from_bytes(derive(self.seed, "gas", function, entropy_label)[:8], "big")
        gas = self.cost_model.pick(function, self.gas_policy, entropy)
        self.gas_by_sender[sender.id] += gas
        self.gas_by_function[function] += gas
        self.calls_by_function[function] += 1
        if self.gas_price > 0:
            fee = min(gas * self.gas_price, self.balances.get(sender.id, 0))
            self.balances[sender.id] -= fee
            self.fee_sink += fee
            self.fees_paid[sender.id] += fee
        return gas

    def _execute(self, tx: Transaction) -> None:
        name = tx.call.contract
        contract = self.contracts.get(name)
        self.escrow -= tx.attached_value
        if contract is None:
            self.balances[tx.sender.id] += tx.attached_value
            tx.status, tx.reason = "rejected", UnknownContract.__name__
            logger.debug("tx %d: unknown contract %s", tx.seq, name)
            return
        tx.gas = self.charge(tx.sender, tx.call.function, tx.seq)
        self.contract_balances[name] += tx.attached_value
        ctx = CallContext(self, tx, name)
        try:
            contract.execute(ctx, tx.call.function, tx.call.kwargs)
        except ContractError as exc:
            self._move_from_contract(name, tx.sender.id, tx.attached_value)
            tx.status, tx.reason = "rejected", exc.reason
            logger.debug("tx %d %s.%s rejected: %s %s", tx.seq, name, tx.call.function, exc.reason, exc)
            return
        tx.status = "accepted"
        logger.debug("tx %d %s.%s accepted at block %d", tx.seq, name, tx.call.function, self.height)

    def _move_from_contract(self, name: str, to: str, amount: int) -> None:
        if amount < 0 or self.contract_balances[name] < amount:
            raise RuntimeError(f"contract {name} cannot pay {amount}")
        self.contract_balances[name] -= amount
        self.balances[to] = self.balances.get(to, 0) + amount

    def _burn_from_contract(self, name: str, amount: int) -> None:
        if amount < 0 or self.contract_balances[name] < amount:
            raise RuntimeError(f"contract {name} cannot burn {amount}")
        self.contract_balances[name] -= amount
        self.burned += amount

    # views

    def transactions(self, function: str | None = None, accepted_only: bool = False) -> Iterable[Transaction]:
        for tx in self.log:
            if function is not None and tx.call.function != function:
                continue
            if accepted_only and not tx.accepted:
                continue
            yield tx

    def snapshot(self) -> ChainState:
        return ChainState(
            height=self.height,
            ledger=tuple(sorted(self.balances.items())),
            deposits=tuple(sorted(self.contract_balances.items())),
            log=tuple(
                TxRecord(
                    seq=tx.seq,
                    block=tx.block or 0,
                    sender=tx.sender.id,
                    contract=tx.call.contract,
                    function=tx.call.function,
                    args=json.dumps(canonical(tx.call.kwargs), sort_keys=True),
                    attached_value=tx.attached_value,
                    status=tx.status,
                    reason=tx.reason,
                    gas=tx.gas,
                )
                for tx in self.log
            ),
            beacon=tuple((height, value.hex()) for height, value in sorted(self.beacon.items())),
            escrow=self.escrow,
            fee_sink=self.fee_sink,
            burned=self.burned,
            minted=self.minted,
        )
