"""Self-describing JSON checkpoints for every forecaster.

Neural tensors are stored as base64 of little-endian float64 bytes in C order,
so save -> load -> save is byte-identical. AR and SVR coefficients are plain
JSON numbers (Python's float repr round-trips exactly).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import neural_core as nc
from .forecasters import (
    ARIMAForecaster,
    ARParams,
    ForecastModel,
    RecurrentForecaster,
    RecurrentHyper,
    SVRForecaster,
    SVRParams,
)
from .timeseries_data import NormalizationParams

FORMAT = "tprnn-checkpoint"
VERSION = 1
DTYPE = "<f8"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: ForecastModel
    normalization: NormalizationParams
    fingerprint: dict = field(default_factory=dict)


def encode_tensor(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype=DTYPE)
    return {"dtype": DTYPE, "order": "C", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(doc: dict) -> np.ndarray:
    if doc.get("dtype") != DTYPE or doc.get("order", "C") != "C":
        raise CheckpointError(f"unsupported tensor encoding {doc.get('dtype')}/{doc.get('order')}")
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype=DTYPE).reshape(doc["shape"]).astype(np.float64)


def _model_params(model: ForecastModel) -> dict:
    if isinstance(model, RecurrentForecaster):
        net = model.net
        return {
            "cell_kind": net.cell_kind,
            "input_size": net.input_size,
            "hidden_sizes": net.hidden_sizes,
            "output_size": net.output_size,
            "tensors": {name: encode_tensor(a) for name, a in net.named_arrays()},
        }
    if isinstance(model, ARIMAForecaster):
        p = model.params
        return {"p": p.p, "phi": list(p.phi), "delta": p.delta, "mu": p.mu}
    if isinstance(model, SVRForecaster):
        p = model.params
        return {"w": list(p.w), "b": p.b, "epsilon": p.epsilon, "c": p.c}
    raise CheckpointError(f"cannot serialize {type(model).__name__}")


def dumps(ckpt: Checkpoint) -> str:
    model = ckpt.model
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "kind": model.kind,
        "w": model.w,
        "seed": model.seed,
        "hyperparameters": model.hyperparameters(),
        "normalization": {"min": ckpt.normalization.min, "max": ckpt.normalization.max},
        "fingerprint": ckpt.fingerprint,
        "params": _model_params(model),
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def loads(text: str) -> Checkpoint:
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise CheckpointError("not a tprnn checkpoint")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    kind, w, seed, hp, params = doc["kind"], doc["w"], doc["seed"], doc["hyperparameters"], doc["params"]
    if kind in ("rnn", "drnn", "tprnn"):
        model = RecurrentForecaster(kind, w, RecurrentHyper(**hp), seed)
        arrays = {name: decode_tensor(t) for name, t in params["tensors"].items()}
        model.net = nc.StackedNetParams.from_arrays(params["cell_kind"], arrays)
    elif kind == "arima":
        model = ARIMAForecaster(w, hp["p"], hp["d"], seed)
        model.params = ARParams(params["p"], tuple(params["phi"]), params["delta"], params["mu"])
    elif kind == "svr":
        model = SVRForecaster(w, seed=seed, **hp)
        model.params = SVRParams(tuple(params["w"]), params["b"], params["epsilon"], params["c"])
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    norm = NormalizationParams(doc["normalization"]["min"], doc["normalization"]["max"])
    return Checkpoint(model, norm, doc["fingerprint"])


def save(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.write_text(dumps(ckpt))
    return path


def load(path) -> Checkpoint:
    try:
        return loads(Path(path).read_text())
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
