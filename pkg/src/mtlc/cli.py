"""Command-line front end.

Every command takes a JSON config (``--config``) and an output
directory; flags override scalar config fields. Stages are runnable
standalone on the CSVs of earlier stages, and ``pipeline`` composes
them with staleness-based skipping.

Exit codes: 0 success, 2 configuration error, 3 missing input,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

from .errors import ConfigError, MissingInputError, MtlcError
from . import pipeline as pl

PARALLELISM_ENV = "MTLC_PARALLELISM"

COMMANDS = ("synth", "split", "grid", "fit", "tag", "report", "forecast", "pipeline")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtlc",
        description="Multi-task learning-curve transfer analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory (default: config out_dir or '.')")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument(
            "--parallelism", type=int, default=None,
            help=f"worker count (flag > ${PARALLELISM_ENV} > config > cpu count)",
        )
        p.add_argument(
            "--resume", action=argparse.BooleanOptionalAction, default=True,
            help="skip grid entries already present in the output CSV",
        )
    return parser


def effective_parallelism(flag: int | None, cfg: pl.RunConfig) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(PARALLELISM_ENV)
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"${PARALLELISM_ENV} must be an integer, got {env!r}") from None
    if cfg.parallelism is not None:
        return max(1, cfg.parallelism)
    return os.cpu_count() or 1


def _dispatch(args) -> int:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = pl.load_config(args.config, overrides)

    with open(args.config, "r", encoding="utf-8") as fh:
        import json

        raw = json.load(fh)
    out_dir = args.out or raw.get("out_dir") or "."
    os.makedirs(out_dir, exist_ok=True)
    parallelism = effective_parallelism(args.parallelism, cfg)

    started = time.time()
    if args.command == "pipeline":
        ran = pl.run_pipeline(cfg, out_dir, parallelism, resume=args.resume)
        if ran:
            print(f"pipeline: ran stages {', '.join(ran)}")
        else:
            print("pipeline: up to date")
        return 0

    if args.command == "synth":
        outputs = pl.stage_synth(cfg, out_dir)
    elif args.command == "split":
        outputs = pl.stage_split(cfg, out_dir)
    elif args.command == "grid":
        outputs = pl.stage_grid(cfg, out_dir, parallelism, resume=args.resume)
    elif args.command == "fit":
        outputs = pl.stage_fit(cfg, out_dir)
    elif args.command == "tag":
        outputs = pl.stage_tag(cfg, out_dir, parallelism)
    elif args.command == "report":
        outputs = pl.stage_report(cfg, out_dir)
    elif args.command == "forecast":
        outputs = pl.stage_forecast(cfg, out_dir)
    else:  # pragma: no cover
        raise ConfigError(f"unknown command {args.command}")
    pl.write_manifest(cfg, out_dir, args.command, outputs, started, time.time())
    print(f"{args.command}: wrote {', '.join(outputs)}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    except (MissingInputError, FileNotFoundError) as exc:
        print(f"missing input [{args.command}]: {exc}", file=sys.stderr)
        return 3
    except MtlcError as exc:
        print(f"numerical failure [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
