from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from services.errors import UnknownFunction


@dataclass(frozen=True)
class CostModel:
    """Per-function gas ranges, in gas units."""

    entries: dict[str, tuple[int, int]] = field(default_factory=dict)

    def bounds(self, function: str) -> tuple[int, int]:
        try:
            return self.entries[function]
        except KeyError:
            raise UnknownFunction(function) from None

    def pick(self, function: str, policy: str, entropy: int = 0) -> int:
        low, high = self.bounds(function)
        if policy == "max":
            return high
        if policy == "mid":
            return (low + high) // 2
        if policy == "sampled":
            return low + entropy % (high - low + 1)
        return low

    def covers(self, functions: set[str]) -> set[str]:
        """Return the functions that have no entry."""
        return {name for name in functions if name not in self.entries}


def load_cost_model(path: Path) -> CostModel:
    data = json.loads(Path(path).read_text())
    entries: dict[str, tuple[int, int]] = {}
    for name, value in data.items():
        # keys starting with "_" annotate the file
        if name.startswith("_"):
            continue
        if isinstance(value, (int, float)):
            low = high = int(value)
        elif isinstance(value, dict):
            low, high = int(value["min"]), int(value["max"])
        else:
            low, high = int(value[0]), int(value[1])
        if low > high:
            raise ValueError(f"cost entry {name!r} has min {low} > max {high}")
        entries[name] = (low, high)
    return CostModel(entries=entries)
