"""``turbo`` command line: one subcommand per stage plus the full pipeline.

Exit codes: 0 success, 2 configuration error, 3 numerical failure (the stage
tag is printed on stderr).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import STAGES, ConfigError, parse_config
from .harness import StageError, output_root, run_stage, write_result

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# evolve flags named in the interface; each maps to a schema key
EVOLVE_FLAGS = {
    "data": str,
    "grid": int,
    "dt": float,
    "r": int,
    "tau0": float,
    "eps": float,
    "eps-bar": float,
    "t-end": float,
    "picard-max": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: config error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _parse_set(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError([f"command line: --set expects key=value, got {item!r}"])
    key, text = item.split("=", 1)
    try:
        return key.strip(), json.loads(text)
    except json.JSONDecodeError:
        return key.strip(), text  # bare words are strings


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="turbo", description="Analytic-approximation experiments for incompressible Euler.")
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for stage in STAGES:
        sp = sub.add_parser(stage, help=f"run the {stage} stage")
        sp.add_argument("--config", type=Path, help="configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a stage parameter (JSON value)")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--out", type=Path, help="output root (default $TURBO_OUT or ./turbo_out)")
        if stage == "evolve":
            for flag, kind in EVOLVE_FLAGS.items():
                sp.add_argument(f"--{flag}", type=kind, dest=flag.replace("-", "_"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
        overrides = dict(_parse_set(s) for s in args.set)
        if args.stage == "evolve":
            for flag in EVOLVE_FLAGS:
                key = flag.replace("-", "_")
                if getattr(args, key) is not None:
                    overrides[key] = getattr(args, key)
        cfg = parse_config(text, args.stage, overrides, args.seed)
        result = run_stage(cfg)
        out = write_result(result, args.out or output_root())
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"[{exc.stage}] numerical failure: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    print(out)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
