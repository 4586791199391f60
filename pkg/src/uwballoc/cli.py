"""Command-line entry point: ``uwballoc {run,oracle-check,dump-mcs,validate-config}``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .allocator.oracle import compare_with_oracle
from .errors import ConfigError
from .mcs import mcs_table_csv
from .scenario import (config_from_dict, config_to_dict, load_config_dict, apply_overrides,
                       rows_csv, run_scenario, summary_csv)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_IO = 3

ORACLE_GAP_LIMIT = 0.02

log = logging.getLogger("uwballoc")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwballoc", description=__doc__)
    p.add_argument("--version", action="version", version=f"uwballoc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, need_config: bool):
        sp.add_argument("--config", type=Path, required=need_config, help="scenario TOML file")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. run.n_trials=10 (repeatable)")
        sp.add_argument("-v", "--verbose", action="count", default=0)

    run = sub.add_parser("run", help="run a Monte Carlo scenario and write CSVs")
    common(run, True)
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--trials", type=int)
    run.add_argument("--algo", choices=("optimal", "suboptimal", "both"))

    val = sub.add_parser("validate-config", help="parse and check a scenario file")
    common(val, True)

    orc = sub.add_parser("oracle-check", help="compare the optimal allocator with brute force")
    orc.add_argument("--instances", type=int, default=200)
    orc.add_argument("--seed", type=int, default=0)
    orc.add_argument("--users", type=int, default=3)
    orc.add_argument("--bands", type=int, default=3)
    orc.add_argument("--mode", choices=("per_band_argmax", "one_band_per_user"),
                     default="per_band_argmax")
    orc.add_argument("--out", type=Path, help="write the report as JSON here")
    orc.add_argument("-v", "--verbose", action="count", default=0)

    mcs = sub.add_parser("dump-mcs", help="print the MCS table as CSV")
    mcs.add_argument("--out", type=Path, help="write to this file instead of stdout")
    mcs.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _resolve(args):
    data = load_config_dict(args.config)
    overrides = list(args.override)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    if getattr(args, "trials", None) is not None:
        overrides.append(f"run.n_trials={args.trials}")
    algo = getattr(args, "algo", None)
    if algo is not None:
        algos = '["optimal", "suboptimal"]' if algo == "both" else f'["{algo}"]'
        overrides.append(f"run.algorithms={algos}")
    return config_from_dict(apply_overrides(data, overrides))


def manifest(cfg) -> dict:
    resolved = config_to_dict(cfg)
    blob = json.dumps(resolved, sort_keys=True).encode()
    return {"version": __version__, "seed": cfg.seed,
            "config_sha256": hashlib.sha256(blob).hexdigest(), "config": resolved}


def _cmd_run(args) -> int:
    cfg = _resolve(args)
    log.info("running %d trials of %s", cfg.n_trials, ", ".join(cfg.algorithms))
    report = run_scenario(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "trials.csv").write_text(rows_csv(report))
    (args.out / "summary.csv").write_text(summary_csv(report))
    (args.out / "manifest.json").write_text(json.dumps(manifest(cfg), indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", args.out)
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = _resolve(args)
    print(f"ok: {len(cfg.users)} users, {cfg.n_trials} trials, "
          f"{len(cfg.primary.bandwidths_mhz)} bandwidths")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    report = compare_with_oracle(args.instances, args.seed, args.users, args.bands, args.mode)
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out is not None:
        args.out.write_text(text + "\n")
    ok = report["max_sum_rate_gap"] <= ORACLE_GAP_LIMIT and report["hqos_target_misses"] == 0
    return EXIT_OK if ok else EXIT_FAIL


def _cmd_dump_mcs(args) -> int:
    text = mcs_table_csv()
    if args.out is not None:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "validate-config": _cmd_validate, "oracle-check": _cmd_oracle,
             "dump-mcs": _cmd_dump_mcs}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
