"""Command-line entry point: ``capa-kit <subcommand> --config <path>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import CapaError, ConfigError
from .experiments import OUT_ENV, TASKS, default_out_dir, run_experiment, validate_config

SUBCOMMANDS = {
    "beamform": "beamforming SE per method over an aperture or power sweep",
    "capacity": "point-to-point LoS capacity and EDoF over a sweep",
    "spectrum": "singular-value spectrum of the radiation operator",
    "region": "two-user MAC and BC capacity-region polylines",
    "dmt": "Monte-Carlo diversity-multiplexing tradeoff estimate",
    "ecc": "ergodic capacity of CAPA and SPDA fading links",
    "validate": "check a config (schema and physics) without running it",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capa-kit", description="CAPA beamforming, capacity and DMT experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in SUBCOMMANDS.items():
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--config", required=True, help="path to the JSON experiment config")
        if name == "validate":
            continue
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUT_ENV} or ./capa_out)")
        sp.add_argument("--trials", type=int, default=None, help="override the Monte-Carlo trial count")
    return p


def _validate(path) -> int:
    report = validate_config(path)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if report.ok:
        print("ok")
        return 0
    for e in report.errors:
        print(f"error: {e}", file=sys.stderr)
    return 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "validate":
        return _validate(args.config)
    report = validate_config(args.config)
    if report.ok:
        exp = report.config["experiment"]
        if args.command not in TASKS[exp]:
            print(f"error: subcommand {args.command!r} does not apply to experiment {exp!r} "
                  f"(use one of: {', '.join(TASKS[exp])})", file=sys.stderr)
            return 2
    out = args.out if args.out is not None else default_out_dir()
    try:
        summary = run_experiment(args.config, out, seed=args.seed, trials=args.trials, tasks=[args.command])
    except ConfigError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    except CapaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"csv": str(out) + "/" + summary["csv"], "rows": summary["rows"],
                      "config_sha256": summary["config_sha256"]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
