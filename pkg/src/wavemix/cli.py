"""Command line entry point: ``wavemix run | validate | list-experiments``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time

from .config import ConfigError, load
from .experiments import DESCRIPTIONS, EXPERIMENTS, run_experiment, validate_config, write_outputs
from .grid import GridError
from .clt import EnsembleError

log = logging.getLogger("wavemix")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _load(args) -> "object":
    cfg = load(args.config)
    if args.seed_override is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed_override)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or cfg.output
    t0 = time.perf_counter()
    try:
        outcome = run_experiment(cfg, args.threads)
    except (ConfigError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnsembleError as exc:
        print(f"unstable statistics: {exc}", file=sys.stderr)
        return EXIT_FAIL
    wall = time.perf_counter() - t0
    manifest = write_outputs(cfg, outcome, out_dir, wall)
    for c in outcome.criteria:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {cfg.experiment}/{c.name}: {c.measured} (need {c.threshold})")
    print(f"manifest: {manifest}")
    return EXIT_OK if outcome.passed else EXIT_FAIL


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
        report = validate_config(cfg)
    except (ConfigError, GridError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in report["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps({k: v for k, v in report.items() if k not in ("warnings",)}, indent=2, default=str))
    return EXIT_CONFIG if report["errors"] else EXIT_OK


def cmd_list(args) -> int:
    for name in EXPERIMENTS:
        print(f"{name:16s} {DESCRIPTIONS[name]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavemix", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", cmd_run, "run an experiment"), ("validate", cmd_validate, "check a config without running it")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--seed-override", type=int, default=None)
        if name == "run":
            s.add_argument("--out", default=None)
            s.add_argument("--threads", type=int, default=1)
        s.set_defaults(func=fn)
    s = sub.add_parser("list-experiments", help="list experiment kinds")
    s.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    return args.func(args)
