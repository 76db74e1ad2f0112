"""Command-line entry point: ``postselect-lab <subcommand> [--config file] [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from postselect_lab.config import PROTOCOLS, ConfigError, ExperimentConfig
from postselect_lab.runner import run, write_outputs

THREADS_ENV = "POSTSELECT_LAB_THREADS"

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_INVALID = 2
EXIT_IO = 3

logger = logging.getLogger("postselect_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="postselect-lab",
        description="Audit post-selection and cross-validation protocols on synthetic data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in PROTOCOLS:
        p = sub.add_parser(name, help=f"run the {name} protocol")
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override master_seed")
        p.add_argument("--out", type=str, help="output directory")
        p.add_argument("--csv", action="store_true", help="also write the CSV report")
        p.add_argument("--fail-on-verdict", action="store_true", help="exit 1 when a verdict fails")
        p.add_argument(
            "--show-misconduct-view",
            action="store_true",
            help="print the luckiest-only view next to the full report (labelled)",
        )
        p.add_argument("--threads", type=int, help=f"worker threads (overrides ${THREADS_ENV})")
    return parser


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": message, "kind": kind}, sort_keys=True), file=sys.stderr)
    return code


def _threads(flag: int | None) -> int | None:
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    if env is None or not env.strip():
        return None
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        cfg = cfg.with_overrides(
            protocol=args.command,
            master_seed=args.seed,
            out=args.out,
            csv=args.csv or None,
            threads=_threads(args.threads),
        )
        result = run(cfg)
    except FileNotFoundError as exc:
        return _error("config", f"config not found: {exc.filename}", EXIT_INVALID)
    except (ConfigError, ValueError) as exc:
        return _error("validation", str(exc), EXIT_INVALID)

    try:
        written = write_outputs(result, cfg.output.dir, cfg.output.csv)
    except OSError as exc:
        return _error("io", str(exc), EXIT_IO)

    for line in result.summary:
        print(line)
    if args.show_misconduct_view and result.misconduct_view:
        print("-- side-by-side views --")
        for line in result.misconduct_view:
            print(line)
    for path in written:
        print(f"wrote {path}")

    if args.fail_on_verdict and not result.passed:
        return EXIT_VERDICT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
