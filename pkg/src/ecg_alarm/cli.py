"""Command-line entry point.

    ecg-alarm [--config FILE] [options] {ingest,train,transform-fit,classify,evaluate}

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numeric or degenerate-geometry error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import TRANSFORM_MODES, ConfigError, load_config
from .features import FeatureError, RankDeficientError
from .geometry import DegenerateGeometryError
from .swarm import SwarmConfigError
from .wfdb_io import WfdbError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("ingest", "train", "transform-fit", "classify", "evaluate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecg-alarm", description="Two-stage ECG alarm pipeline.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="key = value configuration file (default: bundled)")
    parser.add_argument("--data-dir", type=Path, help="directory holding the WFDB records")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="worker processes for per-record work")
    parser.add_argument("--transform-mode", choices=TRANSFORM_MODES)
    parser.add_argument("--alpha", type=float, help="diameter multiplier of the normal check")
    parser.add_argument("--window", type=int, help="prediction window in samples")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"ecg-alarm: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config).with_overrides(
            data_dir=args.data_dir, out_dir=args.out, seed=args.seed, jobs=args.jobs,
            transform_mode=args.transform_mode, alpha=args.alpha, window=args.window,
        )
    except (ConfigError, ValueError) as exc:
        print(f"ecg-alarm: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        summary = _dispatch(args.command, config)
    except ConfigError as exc:
        print(f"ecg-alarm: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateGeometryError, RankDeficientError, SwarmConfigError, FloatingPointError) as exc:
        print(f"ecg-alarm: numeric error: {exc}", file=sys.stderr)
        if isinstance(exc, DegenerateGeometryError):
            print("hint: abnormal centroids are (nearly) collinear with the normal centroid; "
                  "try --transform-mode none or mopso", file=sys.stderr)
        return EXIT_NUMERIC
    except (pipeline.DataError, WfdbError, FeatureError, FileNotFoundError, OSError) as exc:
        print(f"ecg-alarm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(summary, sort_keys=True, indent=1, default=str))
    return EXIT_OK


def _dispatch(command: str, config) -> dict:
    if command == "ingest":
        manifest = pipeline.cmd_ingest(config)
        return {"records": len(manifest["records"]), "total": manifest["total"]}
    if command == "train":
        return pipeline.cmd_train(config)
    if command == "transform-fit":
        return pipeline.cmd_transform_fit(config)
    if command == "classify":
        results = pipeline.cmd_classify(config)
        return {name: {"labels": len(r.labels), "skipped": r.skipped} for name, r in results.items()}
    report = pipeline.cmd_evaluate(config)
    return {"n_samples": report["n_samples"], "final": report["metrics"]["final"],
            "report_dir": str(Path(config.out_dir) / "report")}


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
