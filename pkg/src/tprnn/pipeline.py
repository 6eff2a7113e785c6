"""Glue between configuration, the cached series, pools, models and reports."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .config import RunConfig
from .evaluation import EvalReport, build_report, export_trace
from .forecasters import ForecastModel, make_forecaster, rolling_forecast
from .pooling import PoolSet, SplitConfig, build_pools, split_pools
from .timeseries_data import (
    LoadSeries,
    NormalizationParams,
    denormalize,
    impute_missing,
    normalize,
    parse_ucihpc_csv,
    slice_weeks,
)

logger = logging.getLogger(__name__)

# bump when parsing or imputation changes so stale caches are not reused
PREPROCESS_VERSION = "minute-of-day-mean-v1"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class CachedSeries:
    series: LoadSeries
    meta: dict
    cache_dir: Path
    fresh: bool


def ingest(cfg: RunConfig) -> CachedSeries:
    """Parse + impute the dataset once; later calls load the cached arrays."""
    path = cfg.dataset_path()
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    digest = file_sha256(path)
    key = hashlib.sha256(f"{digest}:{PREPROCESS_VERSION}".encode()).hexdigest()[:16]
    cdir = cfg.cache_path() / key
    meta_path = cdir / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        series = LoadSeries(
            dt.datetime.fromisoformat(meta["start"]),
            np.load(cdir / "values.npy"),
            np.load(cdir / "imputed_mask.npy"),
        )
        return CachedSeries(series, meta, cdir, fresh=False)
    records = parse_ucihpc_csv(path)
    series = impute_missing(records)
    meta = {
        "dataset": str(path),
        "dataset_sha256": digest,
        "preprocess": PREPROCESS_VERSION,
        "raw_records": len(records),
        "missing_gap_records": records.n_missing,
        "total_minutes": len(series),
        "imputed_minutes": int(series.imputed_mask.sum()),
        "start": series.start.isoformat(),
        "end": series.end.isoformat(),
    }
    cdir.mkdir(parents=True, exist_ok=True)
    np.save(cdir / "values.npy", series.values)
    np.save(cdir / "imputed_mask.npy", series.imputed_mask)
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return CachedSeries(series, meta, cdir, fresh=True)


@dataclass
class Prepared:
    """Normalized pools for one span plus what is needed to tie models to it."""

    train: PoolSet
    test: PoolSet
    normalization: NormalizationParams
    fingerprint: dict


def prepare_weeks(weeks, cfg: RunConfig, dataset_sha256: str = "") -> Prepared:
    """Pool raw-kW weeks, split them, and min-max scale on the training part only."""
    raw_pools = build_pools(weeks, cfg.n, cfg.m)
    raw_train, _ = split_pools(raw_pools, SplitConfig(cfg.train_fraction, cfg.seed))
    norm = NormalizationParams.fit(np.concatenate([s.values for s in raw_train.segments()]))
    scaled = [normalize(wk, norm) for wk in weeks]
    train, test = split_pools(build_pools(scaled, cfg.n, cfg.m), SplitConfig(cfg.train_fraction, cfg.seed))
    first = weeks[0].start if isinstance(weeks[0], LoadSeries) else None
    fingerprint = {
        "dataset_sha256": dataset_sha256,
        "preprocess": PREPROCESS_VERSION,
        "start": first.isoformat() if first else None,
        "n_weeks": len(weeks),
        "n": cfg.n,
        "m": cfg.m,
        "w": cfg.w,
        "train_fraction": cfg.train_fraction,
    }
    return Prepared(train, test, norm, fingerprint)


def prepare(cfg: RunConfig, cached: CachedSeries) -> Prepared:
    weeks = slice_weeks(cached.series, cfg.start(), cfg.n_weeks)
    return prepare_weeks(weeks, cfg, cached.meta["dataset_sha256"])


def build_model(cfg: RunConfig, kind: str, seed: int | None = None) -> ForecastModel:
    hyper = {k: v for k, v in vars(cfg.model).items() if k != "kind"}
    return make_forecaster(kind, cfg.w, cfg.seed if seed is None else seed, **hyper)


def train_method(cfg: RunConfig, kind: str, prepared: Prepared, log_path=None,
                 seed: int | None = None) -> ckpt_io.Checkpoint:
    model = build_model(cfg, kind, seed)
    log_fh = open(log_path, "w") if log_path else None
    try:
        if hasattr(model, "history"):
            def on_epoch(entry):
                if log_fh:
                    log_fh.write(json.dumps({"method": kind, "epoch": entry.epoch,
                                             "train_loss": entry.train_loss,
                                             "val_rmse": entry.val_rmse}) + "\n")
                    log_fh.flush()

            model.fit(prepared.train, on_epoch=on_epoch)
        else:
            model.fit(prepared.train)
            if log_fh:
                log_fh.write(json.dumps({"method": kind, "fitted": True}) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return ckpt_io.Checkpoint(model, prepared.normalization, dict(prepared.fingerprint))


class FingerprintMismatch(ValueError):
    pass


def check_compatible(checkpoints: dict[str, ckpt_io.Checkpoint], reference: dict | None = None):
    items = list(checkpoints.items())
    base_name, base = (("prepared span", None) if reference is not None else items[0])
    base_fp = reference if reference is not None else base.fingerprint
    problems = []
    for name, ck in items:
        for key in sorted(set(base_fp) | set(ck.fingerprint)):
            if base_fp.get(key) != ck.fingerprint.get(key):
                problems.append(f"{name}: {key}={ck.fingerprint.get(key)!r} vs "
                                f"{base_name}: {base_fp.get(key)!r}")
        if ck.model.w != base_fp.get("w", ck.model.w):
            problems.append(f"{name}: window w={ck.model.w} vs {base_fp.get('w')}")
    if problems:
        raise FingerprintMismatch("incompatible checkpoints:\n  " + "\n  ".join(problems))


def evaluate(checkpoints: dict[str, ckpt_io.Checkpoint], prepared: Prepared, cfg: RunConfig,
             trace_dir=None) -> EvalReport:
    """Rolling one-step forecasts on the test pools, metrics in kW."""
    check_compatible(checkpoints, prepared.fingerprint)
    results, pool_index, span = {}, None, {}
    for name, ck in checkpoints.items():
        fc = rolling_forecast(ck.model, prepared.test, cfg.w)
        truth = denormalize(fc.targets, prepared.normalization)
        pred = denormalize(fc.predictions, prepared.normalization)
        kind = ck.model.kind
        results[kind] = (truth, pred)
        pool_index = fc.windows.pool_index
        if fc.timestamps:
            span = {"first_prediction": fc.timestamps[0].isoformat(),
                    "last_prediction": fc.timestamps[-1].isoformat()}
        if trace_dir is not None:
            export_trace(truth, pred, Path(trace_dir) / f"{kind}.csv", fc.timestamps)
    config = dict(prepared.fingerprint)
    config["seeds"] = {k: ck.model.seed for k, ck in
                       sorted(((c.model.kind, c) for c in checkpoints.values()))}
    config["eval_points_key"] = "n_points"
    config["package_version"] = __version__
    return build_report(results, span, config, pool_index)
