"""Command line entry points: augment, render, validate.

Each command reads a JSON config; `augment` additionally accepts a few
flag overrides.  Exit codes: 0 success, 2 for domain errors (bad config,
malformed inputs, invalid primitives), 3 for filesystem errors.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import GsaugError
from .pipeline import RunConfig, run_augment, run_render, validate_run


def _parser(command: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog=f"gsaug-{command}" if command else "gsaug",
        description={
            "augment": "Insert agents into scene bundles and render augmented frames.",
            "render": "Render scene bundles without edits.",
            "validate": "Check a config and its referenced inputs without rendering.",
        }[command],
    )
    p.add_argument("--config", required=True, help="path to a JSON run config")
    if command == "augment":
        p.add_argument("--copies", type=int, default=None,
                       help="override the number of augmented copies per scene")
        p.add_argument("--mode", default=None,
                       help="override the placement mode")
        p.add_argument("--seed", type=int, default=None,
                       help="override the run seed")
        p.add_argument("--out", default=None,
                       help="override the output directory")
    return p


def _run(command: str, argv) -> int:
    args = _parser(command).parse_args(argv)
    overrides = {}
    if command == "augment":
        overrides = {
            "copies": args.copies,
            "mode": args.mode,
            "seed": args.seed,
            "out_dir": args.out,
        }
    try:
        config = RunConfig.from_json(args.config, overrides)
        if command == "augment":
            report = run_augment(config)
            print(
                f"augment: {report.frames} frames, {report.accepted} agents placed, "
                f"{report.warning_count} warnings -> {report.out_dir}"
            )
        elif command == "render":
            report = run_render(config)
            print(f"render: {report.frames} frames -> {report.out_dir}")
        else:
            report = validate_run(config)
            print(json.dumps(report, indent=2))
    except GsaugError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return 3
    return 0


def main_augment(argv=None) -> int:
    return _run("augment", argv)


def main_render(argv=None) -> int:
    return _run("render", argv)


def main_validate(argv=None) -> int:
    return _run("validate", argv)


def main(argv=None) -> int:
    """Dispatch for `python -m gsaug <command> ...`."""
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: gsaug {augment,render,validate} --config PATH [options]")
        return 0 if argv else 2
    command, rest = argv[0], argv[1:]
    if command not in ("augment", "render", "validate"):
        print(f"error: unknown command {command!r}", file=sys.stderr)
        return 2
    return _run(command, rest)
