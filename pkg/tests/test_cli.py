from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import pytest

from harness.sweep import AUCTION_COLUMNS, VOTING_COLUMNS, default_scenario, parse_range, sweep
from main import main
from services.auction import bat_depth
from services.errors import InvalidScenario

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def cli(tmp_path):
    settings_path = tmp_path / "settings.json"

    def _call(*argv: str) -> int:
        return main(["--settings", str(settings_path), *argv])

    return _call


def test_run_writes_reports(cli, tmp_path, capsys):
    report = tmp_path / "gas.csv"
    results = tmp_path / "results.csv"
    code = cli("run", str(SCENARIOS / "auction_p2.json"), "--report", str(report), "--results", str(results))
    assert code == 0
    assert report.exists() and results.exists()
    out = capsys.readouterr().out
    assert "[ok  ] winning_bid" in out
    assert "state hash:" in out


def test_invalid_scenario_exits_with_two(cli, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"protocol": "auction", "variant": "P2", "bids": [99]}))
    assert cli("run", str(bad)) == 2
    assert cli("run", str(tmp_path / "missing.json")) == 2


def test_od_check_exit_codes(cli):
    p2 = str(SCENARIOS / "auction_p2.json")
    assert cli("od-check", p2, "10,12", "3,12", "--observer", "1") == 0
    assert cli("od-check", p2, "10,12", "3,12", "--observer", "1", "--own-actions") == 1
    assert cli("od-check", p2, "3,12,7", "3,11,7") == 2


def test_seed_flag_overrides_the_scenario(cli, capsys):
    path = str(SCENARIOS / "blindvote_honest.json")
    cli("run", path, "--seed", "21")
    assert "seed 21" in capsys.readouterr().out


def test_settings_are_written(cli, tmp_path):
    assert cli("settings", "--write") == 0
    saved = json.loads((tmp_path / "settings.json").read_text())
    assert saved["gas_policy"] == "min"


def test_sweep_command(cli, tmp_path):
    out = tmp_path / "sweep.csv"
    assert cli("sweep", "--param", "n=2..4", "--step", "2", "--out", str(out)) == 0
    frame = pd.read_csv(out)
    assert list(frame["n"]) == [2, 4]
    assert list(frame["protocol_gas"]) == [n * 705_000 + 7_325_000 for n in (2, 4)]
    assert list(frame["optimized_protocol_gas"]) == [n * 546_000 + 7_325_000 for n in (2, 4)]


def test_sweep_ranges():
    assert parse_range("n=10..50", 20) == ("n", [10, 30, 50])
    with pytest.raises(InvalidScenario):
        parse_range("n=5..1")
    with pytest.raises(InvalidScenario):
        parse_range("n=1-5")


def test_auction_sweep(settings):
    frame = sweep(default_scenario("auction"), settings, "n", [2, 3])
    assert list(frame.columns) == AUCTION_COLUMNS
    assert list(frame["n"]) == [2, 3]
    assert (frame["restarts"] == 0).all()
    assert (frame["total_gas"] >= 1_850_000 + 2 * 92_000).all()
    assert (frame["max_bidder_gas"] >= 92_000 + 61_000).all()
    assert (frame["max_bidder_gas"] < frame["total_gas"]).all()


def test_auction_sweep_over_m(settings):
    frame = sweep(default_scenario("auction"), settings, "m", [4, 64])
    assert list(frame["m"]) == [4, 64]
    assert list(frame["n"]) == [1, 1]
    assert list(frame["blocks_used"]) == [bat_depth(4) + 1, bat_depth(64) + 1]


def test_voting_sweep_rejects_other_parameters(settings):
    assert VOTING_COLUMNS[0] == "n"
    with pytest.raises(InvalidScenario):
        sweep(default_scenario(), settings, "m", [8])
