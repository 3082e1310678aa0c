"""Command-line entry point: one subcommand per pipeline stage plus ``run``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .pipeline import STAGES, Experiment, RunConfig, StageError, run_pipeline


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory (default: ./run)")
    common.add_argument("--seed", type=_u64, help="run seed; overrides the config file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="entropy-select",
        description="Entropy-based training-sample selection experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    sub.add_parser("run", parents=[common], help="run every stage in order")
    return parser


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _previous_stages(out: Path) -> list[str]:
    path = out / "manifest.json"
    if not path.exists():
        return []
    return list(json.loads(path.read_text(encoding="utf-8")).get("stages_completed", []))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        try:
            manifest = run_pipeline(config, args.out)
        except StageError as exc:
            print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
            return 1
        print(f"complete: IP={manifest['informative_proportion']:.4f} -> {args.out / 'manifest.json'}")
        return 0

    exp = Experiment(config, args.out)
    exp.out.mkdir(parents=True, exist_ok=True)
    # a stage invalidates everything recorded after it
    done = [s for s in _previous_stages(exp.out) if STAGES.index(s) < STAGES.index(args.command)]
    try:
        exp.run_stage(args.command)
    except StageError as exc:
        exp.write_manifest(done, failed_stage=exc.stage)
        print(f"error: stage {exc.stage} failed: {exc.cause}", file=sys.stderr)
        return 1
    exp.write_manifest(done + [args.command])
    return 0


if __name__ == "__main__":
    sys.exit(main())
