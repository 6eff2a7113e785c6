"""Error metrics, the five-method comparison report and plot-ready traces."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .forecasters import DISPLAY_NAMES, METHOD_ORDER

# Published comparison (kW), shown next to desk-scale results; never asserted.
REFERENCE_TABLE = {
    "svr": {"rmse": 0.96, "mae": 0.77},
    "arima": {"rmse": 0.81, "mae": 0.75},
    "rnn": {"rmse": 0.75, "mae": 0.55},
    "drnn": {"rmse": 0.39, "mae": 0.20},
    "tprnn": {"rmse": 0.37, "mae": 0.19},
}


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise ValueError("metrics need at least one point")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise ValueError("metrics need finite values")
    return y, yhat


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    d = np.abs(y - yhat)
    # factor out the largest error so squaring cannot underflow or overflow
    scale = float(d.max())
    if scale == 0.0:
        return 0.0
    return scale * math.sqrt(float(np.mean((d / scale) ** 2)))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


@dataclass
class MetricRow:
    rmse: float
    mae: float
    n_points: int
    per_pool: dict = field(default_factory=dict)  # pool index -> {"rmse", "mae"}

    def as_dict(self):
        return {"rmse": self.rmse, "mae": self.mae, "n_points": self.n_points,
                "per_pool": {str(k): v for k, v in sorted(self.per_pool.items())}}


@dataclass
class EvalReport:
    rows: dict  # method kind -> MetricRow, in display order
    span: dict
    config: dict

    def to_json(self) -> str:
        doc = {
            "span": self.span,
            "config": self.config,
            "rows": [{"method": DISPLAY_NAMES.get(k, k), "kind": k, **row.as_dict()}
                     for k, row in self.rows.items()],
            "reference": [{"method": DISPLAY_NAMES[k], **v} for k, v in REFERENCE_TABLE.items()],
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        rows = {r["kind"]: MetricRow(r["rmse"], r["mae"], r["n_points"],
                                     {int(k): v for k, v in r["per_pool"].items()})
                for r in doc["rows"]}
        return cls(rows, doc["span"], doc["config"])

    def table(self, reference: bool = True) -> str:
        head = f"{'Method':<8} {'RMSE':>8} {'MAE':>8}"
        if reference:
            head += f"   {'ref RMSE':>10} {'ref MAE':>9}"
        lines = [head, "-" * len(head)]
        for kind, row in self.rows.items():
            line = f"{DISPLAY_NAMES.get(kind, kind):<8} {row.rmse:>8.4f} {row.mae:>8.4f}"
            if reference and kind in REFERENCE_TABLE:
                ref = REFERENCE_TABLE[kind]
                line += f"   {ref['rmse']:>10.2f} {ref['mae']:>9.2f}"
            lines.append(line)
        return "\n".join(lines) + "\n"


def build_report(results: Mapping[str, tuple], span: dict | None = None,
                 config: dict | None = None, pool_index=None) -> EvalReport:
    """Metric table from ``{kind: (truth_kw, prediction_kw)}``.

    All truths must be identical (one shared test sequence). Rows follow the
    fixed SVR, ARIMA, RNN, DRNN, TPRNN order; unknown kinds go last.
    """
    truth0 = None
    for kind, (truth, pred) in results.items():
        truth, pred = np.asarray(truth, dtype=np.float64), np.asarray(pred, dtype=np.float64)
        if truth.shape != pred.shape:
            raise ValueError(f"{kind}: prediction length {pred.shape} != truth length {truth.shape}")
        if truth0 is None:
            truth0 = truth
        elif truth.shape != truth0.shape or not np.array_equal(truth, truth0):
            raise ValueError(f"{kind}: truth sequence differs from the other methods")
    order = [k for k in METHOD_ORDER if k in results] + [k for k in results if k not in METHOD_ORDER]
    rows = {}
    for kind in order:
        truth, pred = (np.asarray(a, dtype=np.float64) for a in results[kind])
        per_pool = {}
        if pool_index is not None:
            pools = np.asarray(pool_index)
            for j in np.unique(pools):
                sel = pools == j
                per_pool[int(j)] = {"rmse": rmse(truth[sel], pred[sel]), "mae": mae(truth[sel], pred[sel])}
        rows[kind] = MetricRow(rmse(truth, pred), mae(truth, pred), int(truth.size), per_pool)
    return EvalReport(rows, dict(span or {}), dict(config or {}))


def export_trace(truth, prediction, path, timestamps: Sequence | None = None) -> None:
    """Write ``timestamp_iso8601,actual_kw,predicted_kw``, one row per predicted minute."""
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if truth.shape != prediction.shape:
        raise ValueError("truth and prediction are not aligned")
    if timestamps is None:
        if truth.size:
            raise ValueError("timestamps are required for a non-empty trace")
        timestamps = []
    if len(timestamps) != truth.size:
        raise ValueError("timestamps are not aligned with the trace")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp_iso8601", "actual_kw", "predicted_kw"])
        for ts, a, p in zip(timestamps, truth, prediction):
            writer.writerow([ts.isoformat() if hasattr(ts, "isoformat") else str(ts),
                             repr(float(a)), repr(float(p))])


def read_trace(path):
    """Inverse of :func:`export_trace`: ``(timestamps, actual, predicted)``."""
    stamps, actual, predicted = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["timestamp_iso8601", "actual_kw", "predicted_kw"]:
            raise ValueError(f"{path}: not a trace file")
        for row in reader:
            stamps.append(row[0])
            actual.append(float(row[1]))
            predicted.append(float(row[2]))
    return stamps, np.array(actual), np.array(predicted)
