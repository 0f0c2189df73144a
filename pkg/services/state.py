from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"
DEFAULT_SETTINGS_PATH = Path.home() / ".local" / "state" / "blindlab" / "settings.json"
GAS_POLICIES = ("min", "max", "mid", "sampled")


@dataclass
class LabSettings:
    seed: int = 0
    blindvote_costs: str = str(CONFIG_DIR / "blindvote_costs.json")
    auction_costs: str = str(CONFIG_DIR / "auction_costs.json")
    gas_policy: str = "min"
    gas_price: int = 0
    key_bits: int = 64
    blocks_per_unit: int = 1
    workers: int = 1
    log_level: str = "WARNING"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LabSettings":
        settings = cls()
        for key, value in data.items():
            if hasattr(settings, key):
                setattr(settings, key, value)
        if settings.gas_policy not in GAS_POLICIES:
            settings.gas_policy = "min"
        return settings


def load_settings(path: Path | None = None) -> LabSettings:
    path = path or DEFAULT_SETTINGS_PATH
    settings = LabSettings()
    try:
        if path.exists():
            data = json.loads(path.read_text())
            if isinstance(data, dict):
                settings = LabSettings.from_dict(data)
    except Exception:
        logger.warning("could not read settings from %s, using defaults", path)
    seed = os.environ.get("SEED", "").strip()
    if seed:
        try:
            settings.seed = int(seed)
        except ValueError:
            logger.warning("ignoring non-decimal SEED=%r", seed)
    return settings


def save_settings(path: Path, settings: LabSettings) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(settings.to_dict(), indent=2))
