"""Command-line entry point: validate-data, run, aggregate, report, fixtures.

Exit codes: 0 success, 1 validation or input failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data_model import DataError
from .evaluation import EmptyGroupError
from .report import TABLE_MEASURES, measure_tables, render_text, write_report
from .runner import (
    ConfigError,
    load_config,
    load_fixture_doc,
    load_records,
    run_experiment,
    write_fixture_tree,
)
from .validation import validate_dataset

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("traffic_bench")


def _abs(p: str | None) -> str | None:
    return str(Path(p).expanduser().resolve()) if p else None


def _config_overrides(args) -> dict:
    overrides = {
        "dataset_root": _abs(getattr(args, "data", None)),
        "output_dir": _abs(getattr(args, "output", None)),
        "parallelism": getattr(args, "parallelism", None),
        "parts": getattr(args, "parts", None),
        "metrics": getattr(args, "metrics", None),
        "models": getattr(args, "models", None),
        "windows": getattr(args, "windows", None),
        "sample": getattr(args, "sample", None),
        "interval": getattr(args, "interval", None),
    }
    if getattr(args, "seed", None) is not None:
        overrides["seeds"] = [args.seed]
    if getattr(args, "fixture_mode", False):
        overrides["fixture_mode"] = True
    if getattr(args, "isolated", False):
        overrides["worker_isolation"] = True
    return overrides


def cmd_validate_data(args) -> int:
    config = load_config(args.config, _config_overrides(args))
    if config.dataset_root is None:
        raise ConfigError("no dataset root (use --data, the config file or TRAFFIC_BENCH_DATA)")
    report = validate_dataset(config.dataset_root, config.interval, config.parts, config.layout)
    print(report.render())
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_run(args) -> int:
    config = load_config(args.config, _config_overrides(args))
    if not config.fixture_mode:
        if config.dataset_root is None:
            raise ConfigError("no dataset root (use --data, the config file or TRAFFIC_BENCH_DATA)")
        report = validate_dataset(config.dataset_root, config.interval, config.parts, config.layout)
        if not report.ok:
            print(report.render(), file=sys.stderr)
            return EXIT_INVALID
    result = run_experiment(config, resume=args.resume)
    counts = result.manifest["status_counts"]
    print(f"{result.manifest['record_count']}/{result.manifest['job_count']} records "
          f"({counts['ok']} ok, {counts['failed']} failed) -> {result.records_path}")
    return EXIT_OK


def _records_or_fail(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"records not found: {path}")
    records = load_records(path)
    if not records:
        raise EmptyGroupError(f"no records in {path}")
    return records


def cmd_aggregate(args) -> int:
    records = _records_or_fail(args.records)
    measures = args.measures.split(",") if args.measures else TABLE_MEASURES
    tables = measure_tables(records, measures)
    if not tables:
        raise EmptyGroupError("no ok records to aggregate")
    out_dir = Path(args.output) if args.output else None
    for title, table in tables:
        text = render_text(table, title)
        print(text)
        print()
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            slug = title.split(":")[1].strip().replace(" @ ", "_")
            (out_dir / f"{slug}_{table.measure}.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    records = _records_or_fail(args.records)
    path = write_report(records, args.output)
    print(f"report written to {path}")
    return EXIT_OK


def cmd_fixtures(args) -> int:
    doc = load_fixture_doc(args.spec_file)
    paths = write_fixture_tree(doc, args.output)
    print(f"wrote {len(paths)} series files under {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traffic-bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="YAML experiment config")
        if data:
            p.add_argument("--data", help="dataset root (overrides config and TRAFFIC_BENCH_DATA)")
        p.add_argument("--parts", help="comma-separated aggregation levels")
        p.add_argument("--interval", help="10min, 1h or 1day")

    p = sub.add_parser("validate-data", help="check a dataset tree")
    common(p)
    p.set_defaults(func=cmd_validate_data)

    p = sub.add_parser("run", help="execute the experiment matrix")
    common(p)
    p.add_argument("--output", help="run directory")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics", help="comma-separated metric names or 'all'")
    p.add_argument("--models", help="comma-separated model kinds")
    p.add_argument("--windows", help="comma-separated W/H pairs, e.g. 24/1,168/24")
    p.add_argument("--sample", type=int, help="seeded sample of series per part")
    p.add_argument("--resume", action="store_true", help="skip jobs already recorded")
    p.add_argument("--fixture-mode", action="store_true", help="generate and use synthetic fixtures")
    p.add_argument("--isolated", action="store_true", help="mark timings as comparable")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aggregate", help="print mean (std) tables")
    p.add_argument("records", help="records file or run directory")
    p.add_argument("--output", help="also write tables here")
    p.add_argument("--measures", help="comma-separated subset of rmse,r2,harmonic,train_time,pred_time")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("report", help="write markdown report and chart")
    p.add_argument("records", help="records file or run directory")
    p.add_argument("--output", required=True, help="report directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fixtures", help="write a synthetic dataset tree")
    p.add_argument("spec_file", help="YAML fixture spec")
    p.add_argument("--output", required=True, help="dataset root to write")
    p.set_defaults(func=cmd_fixtures)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EmptyGroupError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
