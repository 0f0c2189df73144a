import argparse
import json
import logging
import sys
from pathlib import Path

from harness.od_check import check_observational_determinism
from harness.report import write_rows
from harness.runner import EXIT_INVALID, EXIT_OK, EXIT_VIOLATION, run
from harness.scenario import load_scenario, parse_bids
from harness.sweep import default_scenario, parse_range, sweep
from services.errors import LabError, ScenarioError
from services.state import DEFAULT_SETTINGS_PATH, LabSettings, load_settings, save_settings

logger = logging.getLogger("blindlab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindlab", description="Blind Vote and sealed-bid auction lab")
    parser.add_argument("--settings", type=Path, default=None, help="settings file (JSON)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", help="run one scenario and its checks")
    run_cmd.add_argument("scenario", type=Path)
    run_cmd.add_argument("--seed", type=int, default=None)
    run_cmd.add_argument("--report", type=Path, default=None, help="write the gas report CSV here")
    run_cmd.add_argument("--results", type=Path, default=None, help="auction results CSV")

    od_cmd = commands.add_parser("od-check", help="compare observations for two compatible bid sequences")
    od_cmd.add_argument("scenario", type=Path)
    od_cmd.add_argument("bids_a")
    od_cmd.add_argument("bids_b")
    od_cmd.add_argument("--observer", default="outside", help="'outside' or a bidder index")
    od_cmd.add_argument("--own-actions", action="store_true", help="also compare the observer's own submissions")
    od_cmd.add_argument("--seed", type=int, default=None)

    sweep_cmd = commands.add_parser("sweep", help="emit plot data over a parameter range")
    sweep_cmd.add_argument("--scenario", type=Path, default=None)
    sweep_cmd.add_argument("--param", default="n=10..1000")
    sweep_cmd.add_argument("--step", type=int, default=10)
    sweep_cmd.add_argument("--out", type=Path, default=Path("sweep.csv"))
    sweep_cmd.add_argument("--workers", type=int, default=None)
    sweep_cmd.add_argument("--seed", type=int, default=None)

    settings_cmd = commands.add_parser("settings", help="print the effective settings")
    settings_cmd.add_argument("--write", action="store_true", help="persist them to the settings file")
    return parser


def _cmd_run(args: argparse.Namespace, settings: LabSettings) -> int:
    scenario = load_scenario(args.scenario)
    result = run(scenario, settings, args.seed)
    print(f"{scenario.name}: {scenario.protocol} {scenario.variant}, seed {result.seed}")
    print(result.report.render())
    for check in result.checks:
        mark = "ok  " if check.passed else "FAIL"
        print(f"[{mark}] {check.name}" + (f": {check.detail}" if not check.passed and check.detail else ""))
    print(f"state hash: {result.state_hash}")
    if args.report is not None:
        result.report.write(args.report)
    if args.results is not None and hasattr(result.run, "result_rows"):
        write_rows(result.run.result_rows(), args.results)
    return result.exit_code


def _cmd_od_check(args: argparse.Namespace, settings: LabSettings) -> int:
    scenario = load_scenario(args.scenario)
    verdict = check_observational_determinism(
        scenario,
        parse_bids(args.bids_a),
        parse_bids(args.bids_b),
        args.observer,
        settings,
        seed=args.seed,
        own_actions=args.own_actions,
    )
    print(verdict.describe())
    return EXIT_OK if verdict.equal else EXIT_VIOLATION


def _cmd_sweep(args: argparse.Namespace, settings: LabSettings) -> int:
    scenario = load_scenario(args.scenario) if args.scenario else default_scenario()
    param, values = parse_range(args.param, args.step)
    frame = sweep(scenario, settings, param, values, workers=args.workers, seed=args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(args.out, index=False)
    print(f"wrote {len(frame)} rows to {args.out}")
    return EXIT_OK


def _cmd_settings(args: argparse.Namespace, settings: LabSettings, path: Path) -> int:
    print(json.dumps(settings.to_dict(), indent=2))
    if args.write:
        save_settings(path, settings)
        print(f"saved to {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings_path = args.settings or DEFAULT_SETTINGS_PATH
    settings = load_settings(settings_path)
    level = (args.log_level or settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args, settings)
        if args.command == "od-check":
            return _cmd_od_check(args, settings)
        if args.command == "sweep":
            return _cmd_sweep(args, settings)
        return _cmd_settings(args, settings, settings_path)
    except ScenarioError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except LabError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_VIOLATION


if __name__ == "__main__":
    sys.exit(main())
