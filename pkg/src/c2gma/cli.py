"""Command-line entry point. Each stage is a subcommand; ``run`` executes the configured sequence."""

from __future__ import annotations

import argparse
import sys

from .errors import C2GMAError
from .pipeline import OUT_ENV, STAGES, PipelineError, RunConfig, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="c2gma", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help=f"output directory (default: config 'out', then ${OUT_ENV}, then ./c2gma_out)")
    common.add_argument("--stages", help="comma-separated stage list (run only)")
    common.add_argument("--strict-determinism", action="store_true", default=None,
                        help="deterministic kernels and a single thread")
    common.add_argument("--no-cache", action="store_true", help="re-run stages even when digests match")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    sub.add_parser("run", parents=[common], help="run the configured stages in order")
    return parser


def load_config(args) -> RunConfig:
    config = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    d = config.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["out"] = args.out
    if args.strict_determinism:
        d["strict_determinism"] = True
    if args.no_cache:
        d["cache"] = False
    if args.command != "run":
        d["stages"] = [args.command]
    elif args.stages is not None:
        d["stages"] = [s.strip() for s in args.stages.split(",") if s.strip()]
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
    except C2GMAError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return 2
    try:
        manifest = run_pipeline(config, progress=lambda msg: print(msg, flush=True))
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"done: {len(manifest.stages)} stage(s), manifest at {config.out_dir() / 'manifest.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
