"""Command-line entry point.

    skelsafe gen|train|eval|adapt|corrupt|ablate-mc --config <path> [--out <dir>]
             [--seed <u64>] [--force] [--mode frozen|finetuned]

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numerical failure.
Errors are printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import experiment as ex
from .config import ConfigError, load_config
from .numerics import NumericsError
from .skeldata import DatasetFormatError

COMMANDS = ("gen", "train", "eval", "adapt", "corrupt", "ablate-mc")
EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skelsafe", description="Skeleton-classifier safety experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", help="run directory (overrides the config)")
    p.add_argument("--seed", type=_u64, help="master seed (overrides the config)")
    p.add_argument("--force", action="store_true", help="overwrite existing datasets or checkpoints")
    p.add_argument("--mode", choices=("frozen", "finetuned"), default="finetuned", help="gating mode for adapt")
    return p


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    if args.command == "gen":
        return ex.cmd_gen(cfg, args.force)
    if args.command == "train":
        return ex.cmd_train(cfg, args.force)
    if args.command == "eval":
        return ex.cmd_eval(cfg)
    if args.command == "adapt":
        return ex.cmd_adapt(cfg, args.mode)
    if args.command == "corrupt":
        return ex.cmd_corrupt(cfg)
    return ex.cmd_ablate_mc(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = run(args)
    except (ConfigError, ex.OutputExists) as exc:
        return _fail(EXIT_CONFIG, "exists" if isinstance(exc, ex.OutputExists) else "config", exc)
    except (ex.MissingArtifact, DatasetFormatError) as exc:
        return _fail(EXIT_MISSING, "missing_artifact", exc)
    except (NumericsError, ValueError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    print(json.dumps({"command": args.command, "config_hash": report["config_hash"],
                      "wall_time_s": report["metadata"]["wall_time_s"]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
