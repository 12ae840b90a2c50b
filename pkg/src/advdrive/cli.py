"""Command-line entry point: train, test, adv-train, adv-test, report, map-dump.

Results go to files under the output directory; diagnostics go to stderr.
Exit status: 0 success, 1 configuration error, 2 runtime or numeric error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import Config, keys_help
from .errors import ConfigurationError, LogParseError, NumericError, ProtocolError
from .harness import PolicyRegistry, run_scenario1_training, run_scenario3_adv_training, run_testing
from .maps import build_map
from .metrics import emit_report, find_logs, report_from_logs

log = logging.getLogger("advdrive")

SUBCOMMANDS = {
    "train": "scenario 1: train AC learners of algo.tag next to scripted traffic",
    "test": "scenario 1 or 2 (scenario.kind): run frozen policies and write episode logs",
    "adv-train": "scenario 3: train an adversary against the frozen adversary.victim",
    "adv-test": "scenario 3: run the victim against the trained adversary",
    "report": "compute CC/CO/OS/speed tables and speed series from episode logs",
    "map-dump": "write the structured-text description of scenario.map",
}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="advdrive", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=keys_help(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="flat key = value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: $ADVDRIVE_OUT or ./runs)")
        p.add_argument("--seeds", default=None, help="comma list of seeds; episode seeds for testing, the session seed for training")
        p.add_argument("--desk-scale", action="store_true", help="apply the desk-scale preset")
        p.add_argument("--registry", type=Path, default=None, help="policy checkpoint directory (default: OUT/policies)")
        if name == "report":
            p.add_argument("--in", dest="inputs", type=Path, help="episode log file or directory (default: OUT/logs)")
    return parser


def _out_dir(args) -> Path:
    return args.out if args.out is not None else Path(os.environ.get("ADVDRIVE_OUT", "runs"))


def _load_config(args) -> Config:
    overrides = list(args.overrides)
    if args.seeds is not None:
        if args.command in ("train", "adv-train"):
            seeds = [s for s in args.seeds.split(",") if s.strip()]
            if len(seeds) != 1:
                raise ConfigurationError("training takes exactly one seed in --seeds")
            overrides.append(f"train.seed={seeds[0]}")
        else:
            overrides.append(f"seeds.list={args.seeds}")
    return Config.load(args.config, overrides, desk_scale=args.desk_scale)


def dispatch(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    registry = PolicyRegistry(args.registry if args.registry is not None else out / "policies")
    (out / "config.txt").write_text(cfg.dump())
    if args.command == "train":
        res = run_scenario1_training(cfg, registry, out)
        log.info("saved %s; progress in %s", res.checkpoint, res.record_path)
    elif args.command == "adv-train":
        res = run_scenario3_adv_training(cfg, registry, out)
        log.info("saved %s; victim unchanged; progress in %s", res.checkpoint, res.record_path)
    elif args.command in ("test", "adv-test"):
        res = run_testing(cfg, registry, out, 3 if args.command == "adv-test" else None)
        log.info("wrote %d episode logs under %s", len(res.logs), out / "logs")
    elif args.command == "report":
        src = args.inputs if args.inputs is not None else out / "logs"
        paths = find_logs(src)
        if not paths:
            raise ConfigurationError(f"no episode logs (ep*.csv) under {src}")
        files = emit_report(report_from_logs(paths, cfg["report.normalize"]), out)
        log.info("wrote %s", ", ".join(str(f) for f in files))
    elif args.command == "map-dump":
        m = build_map(cfg["scenario.map"])
        path = out / f"map_{m.map_id}.txt"
        path.write_text("\n".join(m.dump_lines()) + "\n")
        log.info("wrote %s", path)
    return 0


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except ConfigurationError as exc:
        log.error("configuration error: %s", exc)
        return 1
    except (ProtocolError, NumericError, LogParseError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
