"""Command-line interface.

Verbs: train-local, build-library, distill, evaluate, oracle, export-curves.
Exit codes: 0 success, 2 configuration error, 3 training failure, 4 oracle
gate failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import preset, validate_config
from .errors import ConfigError, DemoFailedError, TrainingAbortedError
from .harness import (
    GateFailure,
    cmd_build_library,
    cmd_distill,
    cmd_evaluate,
    cmd_export_curves,
    cmd_oracle,
    cmd_train_local,
)

_COMMANDS = {
    "train-local": cmd_train_local,
    "build-library": cmd_build_library,
    "distill": cmd_distill,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_GATE = 4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="path to a JSON config file")
    parser.add_argument("--preset", help="name of a built-in configuration")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=Path, help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajrl",
        description="Trajectory-centric model-based RL on analytic benchmark environments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        cmd = sub.add_parser(name)
        _add_common(cmd)
    export = sub.add_parser("export-curves")
    export.add_argument("--out", type=Path, required=True, help="run directory")
    return parser


def _load_config(args) -> dict:
    if args.preset and args.config:
        raise ConfigError("preset", "give either --config or --preset, not both")
    if args.preset:
        return preset(args.preset, seed=args.seed, output_dir=args.out)
    if not args.config:
        raise ConfigError("config", "one of --config or --preset is required")
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError("config", f"cannot read {args.config}: {err}") from err
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output_dir"] = str(args.out)
    return validate_config(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-curves":
            path = cmd_export_curves(args.out)
            print(path)
            return EXIT_OK
        config = _load_config(args)
        result = _COMMANDS[args.command](config)
        print(result)
        return EXIT_OK
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingAbortedError, DemoFailedError) as err:
        print(f"training failure: {err}", file=sys.stderr)
        return EXIT_TRAINING
    except GateFailure as err:
        print(f"gate failure: {err}", file=sys.stderr)
        return EXIT_GATE


if __name__ == "__main__":
    sys.exit(main())
