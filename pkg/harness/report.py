"""Gas and penalty reporting over a finished run."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import pandas as pd

from services.simchain import Chain, Identity, Penalty

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["function", "calls", "total_gas", "payer_role"]


def payer_role(identity: Identity) -> str:
    """admin, voter, relay, bidder, organizer, delegate; the owner prefix before ':'."""
    return (identity.owner or "unknown").split(":")[0]


def gas_table(chain: Chain, contract: str) -> pd.DataFrame:
    records = [
        {"function": tx.function, "payer_role": payer_role(tx.sender), "gas": tx.gas}
        for tx in chain.log
        if tx.call.contract == contract
    ]
    if not records:
        return pd.DataFrame(columns=REPORT_COLUMNS)
    frame = pd.DataFrame.from_records(records)
    grouped = frame.groupby(["function", "payer_role"], as_index=False).agg(
        calls=("gas", "size"), total_gas=("gas", "sum")
    )
    return grouped[REPORT_COLUMNS].sort_values(["function", "payer_role"], ignore_index=True)


@dataclass
class Report:
    gas: pd.DataFrame
    penalties: list[Penalty] = field(default_factory=list)
    protocol_functions: frozenset[str] | None = None
    summary: dict[str, Any] = field(default_factory=dict)

    @property
    def total_gas(self) -> int:
        return int(self.gas["total_gas"].sum()) if not self.gas.empty else 0

    @property
    def protocol_gas(self) -> int | None:
        if self.protocol_functions is None:
            return None
        if self.gas.empty:
            return 0
        selected = self.gas[self.gas["function"].isin(self.protocol_functions)]
        return int(selected["total_gas"].sum())

    def totals_by_role(self) -> dict[str, int]:
        if self.gas.empty:
            return {}
        totals = self.gas.groupby("payer_role")["total_gas"].sum()
        return {str(role): int(value) for role, value in totals.items()}

    def write(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.gas.to_csv(path, index=False)
        logger.info("wrote gas report to %s", path)

    def render(self) -> str:
        lines = [f"total gas: {self.total_gas}"]
        if self.protocol_gas is not None:
            lines.append(f"protocol gas: {self.protocol_gas}")
        for role, value in sorted(self.totals_by_role().items()):
            lines.append(f"  {role}: {value}")
        for key, value in self.summary.items():
            lines.append(f"{key}: {value}")
        for penalty in self.penalties:
            lines.append(f"penalty at block {penalty.block}: {penalty.kind} {penalty.amount} ({penalty.party})")
        return "\n".join(lines)


def build_report(
    chain: Chain,
    contract: str,
    penalties: Iterable[Penalty] = (),
    protocol_functions: frozenset[str] | None = None,
    summary: dict[str, Any] | None = None,
) -> Report:
    return Report(gas_table(chain, contract), list(penalties), protocol_functions, dict(summary or {}))


def write_rows(rows: list[dict[str, Any]], path: Path | str, columns: list[str] | None = None) -> pd.DataFrame:
    frame = pd.DataFrame.from_records(rows, columns=columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return frame
