"""Command-line entry point.

Exit codes: 0 success, 1 partial (some tasks failed at the provider), 2 usage/config/input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path

from . import __version__, pipeline
from .config import load_config
from .errors import ConflictCastError

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", type=Path, help="YAML run config (default: built-in defaults)")
    common.add_argument("--verbose", "-v", action="store_true")

    parser = argparse.ArgumentParser(prog="conflictcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse GDELT/ACLED exports into the run corpus")
    p.add_argument("--fetch-articles", action="store_true", help="also scrape article bodies for cited URLs")
    sub.add_parser("fetch-articles", parents=[common], help="scrape article bodies not yet in the corpus")
    sub.add_parser("build-index", parents=[common], help="chunk and embed articles into per-country indexes")
    sub.add_parser("make-labels", parents=[common], help="derive ground-truth labels and quantile bins")
    sub.add_parser("run", parents=[common], help="execute the forecasting task grid")
    p = sub.add_parser("evaluate", parents=[common], help="score predictions and write report files")
    p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("report", parents=[common], help="render reports from one or more metrics.json files")
    p.add_argument("--metrics", nargs="+", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("all", parents=[common], help="ingest, build-index, make-labels, run, evaluate")
    p.add_argument("--no-figures", action="store_true")
    p = sub.add_parser("init-mini", parents=[common], help="copy the bundled synthetic mini-corpus to DEST")
    p.add_argument("dest", type=Path)
    return parser


def _print(result: pipeline.StageResult) -> None:
    for msg in result.messages:
        print(msg)


def _report(args) -> int:
    rows = []
    for path in args.metrics:
        if not path.exists():
            print(f"error: metrics file not found: {path}", file=sys.stderr)
            return EXIT_USAGE
        rows.extend(json.loads(path.read_text(encoding="utf-8")))
    reports = pipeline.metrics_from_json(rows)
    if not reports:
        print("error: no scorable records", file=sys.stderr)
        return EXIT_USAGE
    for p in pipeline.write_reports(reports, args.out, figures=not args.no_figures):
        print(f"wrote {p}")
    return EXIT_OK


def _init_mini(dest: Path) -> int:
    src = resources.files("conflictcast").joinpath("data/mini")
    with resources.as_file(src) as src_path:
        shutil.copytree(src_path, dest, dirs_exist_ok=True)
    print(f"mini-corpus copied to {dest}; try: conflictcast all --config {dest / 'config.yaml'}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "init-mini":
            return _init_mini(args.dest)
        if args.command == "report":
            return _report(args)
        cfg = load_config(args.config)
        stages = {
            "ingest": lambda: pipeline.ingest(cfg, fetch=args.fetch_articles),
            "fetch-articles": lambda: pipeline.fetch_stage(cfg),
            "build-index": lambda: pipeline.build_index(cfg),
            "make-labels": lambda: pipeline.make_labels(cfg),
            "run": lambda: pipeline.run(cfg),
            "evaluate": lambda: pipeline.evaluate(cfg, figures=not args.no_figures),
        }
        if args.command == "all":
            args.fetch_articles = False
            order = ["ingest", "build-index", "make-labels", "run", "evaluate"]
        else:
            order = [args.command]
        partial = False
        for name in order:
            result = stages[name]()
            _print(result)
            partial = partial or result.partial
        return EXIT_PARTIAL if partial else EXIT_OK
    except ConflictCastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
