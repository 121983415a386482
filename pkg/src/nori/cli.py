"""Command-line entry point for the intelligibility-prediction pipeline."""

import argparse
import json
import os
import sys
from dataclasses import asdict

from .pipeline import STAGES, ConfigError, Pipeline, RunConfig

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def build_parser():
    # shared options live on a parent so they parse on either side of the
    # subcommand; SUPPRESS defaults keep the subparser from clobbering
    # values already parsed before the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, help="worker count (results identical)")
    common.add_argument("--out", help="override the output directory")
    common.add_argument("--stage", choices=STAGES,
                        help="with run-all: run only this stage")
    common.add_argument("--force", action="store_true",
                        help="ignore cached stage outputs")
    parser = argparse.ArgumentParser(
        prog="nori",
        description="Non-intrusive speech intelligibility prediction pipeline",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command")
    for name in STAGES:
        sub.add_parser(name, parents=[common],
                       help=f"run the {name} stage (with cached upstream)")
    sub.add_parser("run-all", parents=[common], help="run every stage in order")
    sub.add_parser("show-config", parents=[common],
                   help="print the effective configuration")
    return parser


def load_config(args) -> RunConfig:
    config_path = getattr(args, "config", None)
    config = RunConfig.from_json(config_path) if config_path else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "jobs", None) is not None:
        config.jobs = args.jobs
    out = getattr(args, "out", None)
    if out is not None:
        config.out_dir = out
    cache_root = os.environ.get("NORI_CACHE_DIR")
    if cache_root and out is None and not os.path.isabs(config.out_dir):
        config.out_dir = os.path.join(cache_root, config.out_dir)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG

    try:
        config = load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "show-config":
        print(json.dumps(asdict(config), indent=1, sort_keys=True, default=str))
        return EXIT_OK

    pipeline = Pipeline(config)
    stage_override = getattr(args, "stage", None)
    if args.command == "run-all":
        stages = [stage_override] if stage_override else list(STAGES)
    else:
        stages = [args.command]

    force = getattr(args, "force", False)
    for name in stages:
        try:
            ran = pipeline.run_stage(name, force=force)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except Exception as exc:  # noqa: BLE001 - stage name must reach the user
            print(f"error: stage {name} failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        status = "ran" if ran else "cached"
        print(f"[{status}] {name} -> {pipeline.stages[name].dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
