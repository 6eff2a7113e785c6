"""``tprnn`` command line: ingest, train, evaluate, reproduce, export.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 training failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .forecasters import METHOD_ORDER
from .neural_core import TrainingError
from .pooling import PoolingError
from .timeseries_data import ImputationError, ParseError, export_series_csv, slice_weeks, concat_series

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 1, 2, 3

log = logging.getLogger("tprnn")


class StageError(Exception):
    def __init__(self, stage: str, code: int, message: str):
        self.stage, self.code = stage, code
        super().__init__(f"[{stage}] {message}")


def _stage(name):
    """Map library exceptions raised inside a stage to exit codes."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is None or isinstance(exc, StageError):
                return False
            if isinstance(exc, (ConfigError, pipeline.FingerprintMismatch)):
                raise StageError(name, EXIT_USAGE, str(exc)) from exc
            if isinstance(exc, TrainingError):
                raise StageError(name, EXIT_TRAIN, str(exc)) from exc
            if isinstance(exc, (ParseError, ImputationError, PoolingError, FileNotFoundError,
                                IndexError, ckpt_io.CheckpointError, ValueError, OSError)):
                raise StageError(name, EXIT_DATA, str(exc)) from exc
            return False

    return _Ctx()


def _config(args, need_span=False) -> RunConfig:
    overrides = {
        "dataset": args.dataset,
        "start_date": args.start_date,
        "n_weeks": args.weeks,
        "seed": args.seed,
        "out": args.out,
        "model.kind": getattr(args, "model", None),
    }
    with _stage("config"):
        return load_config(args.config, overrides, args.set).validate(need_span=need_span)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _ckpt_name(kind, seed):
    return f"{kind}-seed{seed}.json"


# --------------------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    cfg = _config(args)
    with _stage("ingest"):
        cached = pipeline.ingest(cfg)
    m = cached.meta
    if not cached.fresh:
        print(f"already cached: {cached.cache_dir} (no work done)")
    print(f"raw records: {m['raw_records']}")
    print(f"missing GAP records: {m['missing_gap_records']}")
    print(f"total minutes: {m['total_minutes']}")
    print(f"imputed minutes: {m['imputed_minutes']}")
    print(f"span: {m['start']} .. {m['end']}")
    return EXIT_OK


def _train_one(cfg, kind, prepared, out: Path, seed=None):
    seed = cfg.seed if seed is None else seed
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    log_path = out / "logs" / f"{kind}-seed{seed}.jsonl"
    with _stage(f"train:{kind}"):
        ck = pipeline.train_method(cfg, kind, prepared, log_path, seed)
        path = ckpt_io.save(ck, out / "checkpoints" / _ckpt_name(kind, seed))
    log.info("trained %s -> %s", kind, path)
    return path, ck


def cmd_train(args) -> int:
    cfg = _config(args, need_span=True)
    with _stage("ingest"):
        cached = pipeline.ingest(cfg)
    with _stage("pooling"):
        prepared = pipeline.prepare(cfg, cached)
    path, _ = _train_one(cfg, cfg.model.kind, prepared, Path(cfg.out))
    print(path)
    return EXIT_OK


def _evaluate(cfg, checkpoints: dict, prepared, out: Path):
    (out / "traces").mkdir(parents=True, exist_ok=True)
    with _stage("evaluate"):
        report = pipeline.evaluate(checkpoints, prepared, cfg, out / "traces")
    (out / "report.json").write_text(report.to_json())
    (out / "report.txt").write_text(report.table())
    return report


def cmd_evaluate(args) -> int:
    cfg = _config(args, need_span=True)
    if not args.checkpoints:
        raise StageError("evaluate", EXIT_USAGE, "no checkpoints given")
    with _stage("evaluate"):
        loaded = {str(p): ckpt_io.load(p) for p in args.checkpoints}
        pipeline.check_compatible(loaded)
    with _stage("ingest"):
        cached = pipeline.ingest(cfg)
    first = next(iter(loaded.values()))
    cfg.w = first.model.w
    with _stage("pooling"):
        prepared = pipeline.prepare(cfg, cached)
    report = _evaluate(cfg, loaded, prepared, Path(cfg.out))
    print(report.table(), end="")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    cfg = _config(args, need_span=True)
    out = Path(cfg.out)
    if out.exists() and any(p.name != "cache" for p in out.iterdir()) and not args.force:
        raise StageError("reproduce", EXIT_USAGE, f"output directory {out} is not empty (use --force)")
    skip = {s.strip().lower() for item in args.skip or [] for s in item.split(",") if s.strip()}
    unknown = skip - set(METHOD_ORDER)
    if unknown:
        raise StageError("reproduce", EXIT_USAGE, f"unknown method(s) in --skip: {', '.join(sorted(unknown))}")
    methods = [k for k in METHOD_ORDER if k not in skip]
    if not methods:
        raise StageError("reproduce", EXIT_USAGE, "every method skipped")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dump())
    with _stage("ingest"):
        cached = pipeline.ingest(cfg)
    with _stage("pooling"):
        prepared = pipeline.prepare(cfg, cached)
    checkpoints = {}
    for kind in methods:
        _, ck = _train_one(cfg, kind, prepared, out)
        checkpoints[kind] = ck
    report = _evaluate(cfg, checkpoints, prepared, out)
    files = sorted(p for p in out.rglob("*") if p.is_file() and "cache" not in p.relative_to(out).parts
                   and p.name != "manifest.json")
    manifest = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python": sys.version.split()[0],
        "config": cfg.to_dict(),
        "methods": methods,
        "dataset_sha256": cached.meta["dataset_sha256"],
        "preprocess": cached.meta["preprocess"],
        "files": {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files},
    }
    _write_json(out / "manifest.json", manifest)
    print(report.table(), end="")
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _config(args)
    if not args.csv:
        raise StageError("export", EXIT_USAGE, "--csv PATH is required")
    with _stage("ingest"):
        cached = pipeline.ingest(cfg)
    with _stage("export"):
        series = cached.series
        if cfg.start_date:
            series = concat_series(slice_weeks(series, cfg.start(), cfg.n_weeks))
        export_series_csv(series, args.csv)
    print(f"wrote {len(series)} rows to {args.csv}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--dataset", help="path to household_power_consumption.txt")
    common.add_argument("--start-date", dest="start_date", help="first day of the span (YYYY-MM-DD)")
    common.add_argument("--weeks", type=int, help="number of weeks in the span")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. model.epochs=5")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tprnn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"tprnn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse, impute and cache the dataset")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train one method and save a checkpoint")
    p.add_argument("--model", choices=METHOD_ORDER)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="rolling forecast + report for checkpoints")
    p.add_argument("checkpoints", nargs="*")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", parents=[common], help="train and compare all five methods")
    p.add_argument("--force", action="store_true", help="allow a non-empty output directory")
    p.add_argument("--skip", action="append", help="comma separated methods to leave out")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("export", parents=[common], help="dump the completed series as CSV")
    p.add_argument("--csv", help="destination CSV path")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"tprnn: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
