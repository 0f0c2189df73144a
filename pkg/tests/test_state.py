from __future__ import annotations

import json

from services.state import LabSettings, load_settings, save_settings


def test_missing_file_gives_defaults(tmp_path, monkeypatch):
    monkeypatch.delenv("SEED", raising=False)
    settings = load_settings(tmp_path / "absent.json")
    assert settings == LabSettings()


def test_save_then_load(tmp_path, monkeypatch):
    monkeypatch.delenv("SEED", raising=False)
    path = tmp_path / "nested" / "settings.json"
    save_settings(path, LabSettings(seed=9, gas_policy="max", workers=3))
    settings = load_settings(path)
    assert (settings.seed, settings.gas_policy, settings.workers) == (9, "max", 3)


def test_unknown_keys_and_policies_are_ignored(tmp_path, monkeypatch):
    monkeypatch.delenv("SEED", raising=False)
    path = tmp_path / "settings.json"
    path.write_text(json.dumps({"gas_policy": "cheapest", "colour": "blue", "key_bits": 128}))
    settings = load_settings(path)
    assert settings.gas_policy == "min"
    assert settings.key_bits == 128
    assert not hasattr(settings, "colour")


def test_corrupt_file_falls_back(tmp_path, monkeypatch):
    monkeypatch.delenv("SEED", raising=False)
    path = tmp_path / "settings.json"
    path.write_text("{not json")
    assert load_settings(path) == LabSettings()


def test_seed_environment_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "settings.json"
    save_settings(path, LabSettings(seed=3))
    monkeypatch.setenv("SEED", "41")
    assert load_settings(path).seed == 41
    monkeypatch.setenv("SEED", "forty")
    assert load_settings(path).seed == 3
