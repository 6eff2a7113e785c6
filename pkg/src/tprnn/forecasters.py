"""The five compared forecasters behind one ``fit`` / ``predict`` contract.

All models work in normalized units and predict the next minute from a
lookback window of ``w`` true past values.

========  ==============================================================
ARIMA     AR(p) least squares on d-times differenced data, no MA term
SVR       linear epsilon-insensitive regression on the lookback window
RNN       one LSTM layer, windows fed in chronological order
DRNN      stacked LSTM layers, windows fed in chronological order
TPRNN     same network as DRNN, windows shuffled across all time pools
========  ==============================================================
"""

from __future__ import annotations

import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, ClassVar, Sequence

import numpy as np

from . import neural_core as nc
from .pooling import (
    PoolSet,
    Segment,
    WindowSet,
    make_windows,
    sequential_batches,
    shuffled_batches,
)

logger = logging.getLogger(__name__)

METHOD_ORDER = ("svr", "arima", "rnn", "drnn", "tprnn")
DISPLAY_NAMES = {"svr": "SVR", "arima": "ARIMA", "rnn": "RNN", "drnn": "DRNN", "tprnn": "TPRNN"}


# --------------------------------------------------------------------------- AR / ARIMA


@dataclass(frozen=True)
class ARParams:
    p: int
    phi: tuple[float, ...]  # phi[0] multiplies the most recent value
    delta: float
    mu: float


def differencing(series, d: int = 1) -> np.ndarray:
    """Apply first differences ``d`` times (works along the last axis)."""
    if d < 0:
        raise ValueError("differencing order must be >= 0")
    out = np.asarray(series, dtype=np.float64)
    if out.shape[-1] <= d:
        raise ValueError(f"series of length {out.shape[-1]} too short for d={d}")
    for _ in range(d):
        out = np.diff(out, axis=-1)
    return out


def inverse_differencing(diffed, initial) -> np.ndarray:
    """Undo ``differencing``. ``initial[k]`` is the first value of the k-times differenced series."""
    initial = np.atleast_1d(np.asarray(initial, dtype=np.float64))
    out = np.asarray(diffed, dtype=np.float64)
    for start in initial[::-1]:
        out = np.concatenate([[start], start + np.cumsum(out)])
    return out


def _lag_rows(series: np.ndarray, p: int):
    # row t holds y[t-1], ..., y[t-p] (most recent first); target y[t]
    lags = np.lib.stride_tricks.sliding_window_view(series[:-1], p)[:, ::-1]
    return lags, series[p:]


def ar_fit(series, p: int) -> ARParams:
    """Least-squares AR(p) fit on the demeaned series.

    ``series`` may be one array or a list of arrays (lag rows are built inside
    each piece, never across pieces). ``delta`` is set to ``(1 - sum(phi)) mu``.
    """
    if p < 1:
        raise ValueError("AR order must be >= 1")
    pieces = [np.asarray(series, dtype=np.float64)] if np.ndim(series[0]) == 0 else [
        np.asarray(s, dtype=np.float64) for s in series]
    if sum(len(s) for s in pieces if len(s) > p) == 0 or any(len(s) <= p + 1 for s in pieces):
        raise ValueError(f"every series must be longer than p + 1 = {p + 1}")
    mu = float(np.mean(np.concatenate(pieces)))
    rows = [_lag_rows(s - mu, p) for s in pieces]
    X = np.concatenate([r[0] for r in rows])
    y = np.concatenate([r[1] for r in rows])
    phi, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p:
        warnings.warn("singular lag matrix; falling back to the mean predictor", RuntimeWarning)
        phi = np.zeros(p)
    phi = tuple(float(v) for v in phi)
    return ARParams(p, phi, (1.0 - sum(phi)) * mu, mu)


def ar_predict(params: ARParams, context) -> np.ndarray | float:
    """``delta + sum_i phi_i y(t-i)``; ``context`` holds the last p values, oldest first."""
    context = np.asarray(context, dtype=np.float64)
    if context.shape[-1] != params.p:
        raise ValueError(f"context length {context.shape[-1]} != p={params.p}")
    out = params.delta + context[..., ::-1] @ np.asarray(params.phi)
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- SVR


@dataclass(frozen=True)
class SVRParams:
    w: tuple[float, ...]
    b: float
    epsilon: float
    c: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.c > 0:
            raise ValueError("c must be > 0")
        if not all(math.isfinite(v) for v in (*self.w, self.b)):
            raise ValueError("SVR parameters must be finite")


def _xy(samples):
    if isinstance(samples, WindowSet):
        return samples.inputs, samples.targets
    X, y = samples
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)


def svr_objective(w, b, X, y, epsilon, c) -> float:
    r = X @ w + b - y
    return 0.5 * float(w @ w) + c * float(np.maximum(0.0, np.abs(r) - epsilon).sum())


def svr_fit(samples, epsilon: float = 0.01, c: float = 1.0, epochs: int = 50, lr: float = 0.01,
            seed: int = 0, batch_size: int = 256, init: SVRParams | None = None) -> SVRParams:
    """Linear epsilon-SVR by mini-batch subgradient descent.

    Minimizes ``0.5 |w|^2 + c sum_i max(0, |w.x_i + b - y_i| - eps)`` (scaled by
    1/S for the step). Step size decays as ``lr / sqrt(k)``; since subgradient
    steps are not monotone, the best iterate by full objective at the end of
    each epoch is returned.
    """
    X, y = _xy(samples)
    if len(y) == 0:
        raise ValueError("svr_fit needs at least one sample")
    SVRParams((), 0.0, epsilon, c)  # argument validation
    S, dim = X.shape
    rng = np.random.default_rng(seed)
    if init is None:
        w = rng.uniform(-0.01, 0.01, dim)
        b = 0.0
    else:
        w, b = np.array(init.w, dtype=np.float64), float(init.b)
    best = (svr_objective(w, b, X, y, epsilon, c), w.copy(), b)
    k = 0
    for epoch in range(epochs):
        order = rng.permutation(S)
        for i in range(0, S, batch_size):
            idx = order[i : i + batch_size]
            r = X[idx] @ w + b - y[idx]
            s = np.where(np.abs(r) > epsilon, np.sign(r), 0.0)
            k += 1
            step = lr / math.sqrt(k)
            w = w - step * (w / S + c * (s @ X[idx]) / len(idx))
            b = b - step * c * s.sum() / len(idx)
        obj = svr_objective(w, b, X, y, epsilon, c)
        if not math.isfinite(obj):
            raise nc.TrainingError(f"SVR objective became non-finite at epoch {epoch}")
        if obj < best[0]:
            best = (obj, w.copy(), b)
    _, w, b = best
    return SVRParams(tuple(float(v) for v in w), float(b), float(epsilon), float(c))


def svr_predict(params: SVRParams, context) -> np.ndarray | float:
    context = np.asarray(context, dtype=np.float64)
    if context.shape[-1] != len(params.w):
        raise ValueError(f"context length {context.shape[-1]} != weight length {len(params.w)}")
    out = context @ np.asarray(params.w) + params.b
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------- contract


class ForecastModel(ABC):
    """Fit on a training PoolSet, then map ``(B, w)`` contexts to ``(B,)`` next values."""

    kind: ClassVar[str]

    def __init__(self, w: int, seed: int = 0):
        self.w = int(w)
        self.seed = int(seed)

    @property
    def name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    @abstractmethod
    def fit(self, train: PoolSet) -> "ForecastModel": ...

    @abstractmethod
    def _predict(self, contexts: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def hyperparameters(self) -> dict: ...

    def predict(self, context):
        ctx = np.asarray(context, dtype=np.float64)
        single = ctx.ndim == 1
        ctx = np.atleast_2d(ctx)
        if ctx.shape[1] != self.w:
            raise ValueError(f"{self.name} expects contexts of length {self.w}, got {ctx.shape[1]}")
        out = self._predict(ctx)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{self.name} produced a non-finite prediction")
        return float(out[0]) if single else out


class ARIMAForecaster(ForecastModel):
    kind = "arima"

    def __init__(self, w: int = 60, p: int = 5, d: int = 1, seed: int = 0):
        super().__init__(w, seed)
        if w < p + d:
            raise ValueError(f"window w={w} too short for p={p}, d={d}")
        self.p, self.d = int(p), int(d)
        self.params: ARParams | None = None

    def hyperparameters(self):
        return {"p": self.p, "d": self.d}

    def fit(self, train):
        pieces = [differencing(s.values, self.d) for s in _segments(train)]
        self.params = ar_fit(pieces, self.p)
        return self

    def _predict(self, contexts):
        # differences of every order at the last observed step, then integrate the forecast
        levels = [contexts]
        for _ in range(self.d):
            levels.append(np.diff(levels[-1], axis=1))
        nxt = ar_predict(self.params, levels[-1][:, -self.p :])
        for level in reversed(levels[:-1]):
            nxt = level[:, -1] + nxt
        return nxt


class SVRForecaster(ForecastModel):
    kind = "svr"

    def __init__(self, w: int = 60, epsilon: float = 0.01, c: float = 1.0, epochs: int = 50,
                 lr: float = 0.01, batch_size: int = 256, seed: int = 0):
        super().__init__(w, seed)
        self.epsilon, self.c, self.epochs, self.lr, self.batch_size = epsilon, c, epochs, lr, batch_size
        self.params: SVRParams | None = None

    def hyperparameters(self):
        return {"epsilon": self.epsilon, "c": self.c, "epochs": self.epochs, "lr": self.lr,
                "batch_size": self.batch_size}

    def fit(self, train):
        windows = train if isinstance(train, WindowSet) else make_windows(train, self.w)
        self.params = svr_fit(windows, self.epsilon, self.c, self.epochs, self.lr, self.seed,
                              self.batch_size)
        return self

    def _predict(self, contexts):
        return svr_predict(self.params, contexts)


# --------------------------------------------------------------------------- recurrent


@dataclass(frozen=True)
class RecurrentHyper:
    layers: int = 2
    hidden: int = 32
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 128
    clip: float = 5.0
    patience: int = 5
    val_fraction: float = 0.1
    cell_kind: str = "lstm"
    full_peephole: bool = False


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_rmse: float


def _sequence_batch(windows: WindowSet):
    """Inputs ``(w, B, 1)`` and per-step next-value targets ``(w, B, 1)``."""
    x = windows.inputs.T[:, :, None]
    tgt = np.concatenate([windows.inputs[:, 1:], windows.targets[:, None]], axis=1).T[:, :, None]
    return x, tgt


def predict_last(net: nc.StackedNetParams, contexts: np.ndarray, chunk: int = 512) -> np.ndarray:
    out = np.empty(len(contexts))
    for i in range(0, len(contexts), chunk):
        y, _ = nc.stacked_forward(net, contexts[i : i + chunk].T[:, :, None])
        out[i : i + chunk] = y[-1, :, 0]
    return out


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def train_network(samples: WindowSet, hyper: RecurrentHyper, seed: int, feeding: str = "chronological",
                  on_epoch: Callable[[EpochLog], None] | None = None):
    """Mini-batch BPTT + Adam with early stopping on the chronological tail.

    The last ``val_fraction`` of samples (in time order) is held out. Every
    step of each window is trained to predict the next value. ``feeding`` is
    ``"chronological"`` (batches in time order) or ``"pooled"`` (seeded
    shuffle across all pools every epoch). Returns ``(params, history)``.
    """
    if len(samples) == 0:
        raise nc.TrainingError("no training samples")
    if feeding not in ("chronological", "pooled"):
        raise ValueError(f"unknown feeding {feeding!r}")
    ordered = samples[samples.chronological_order()]
    n_val = int(math.ceil(hyper.val_fraction * len(ordered))) if len(ordered) >= 10 else 0
    train, val = ordered[: len(ordered) - n_val], ordered[len(ordered) - n_val :]
    dims = nc.NetDims(1, (hyper.hidden,) * hyper.layers, 1, hyper.cell_kind, hyper.full_peephole)
    net = nc.init_params(dims, seed)
    state = nc.AdamState.zeros(net)
    adam = nc.AdamHyper(lr=hyper.lr, clip_norm=hyper.clip)
    rng = np.random.default_rng(seed)
    best_score, best_net, stale = math.inf, net.copy(), 0
    history: list[EpochLog] = []
    for epoch in range(1, hyper.epochs + 1):
        if feeding == "pooled":
            batches = shuffled_batches(train, hyper.batch_size, rng)
        else:
            batches = sequential_batches(train, hyper.batch_size)
        total, count = 0.0, 0
        for batch in batches:
            x, tgt = _sequence_batch(batch)
            loss, grads = nc.loss_and_grad(net, x, tgt)
            if not math.isfinite(loss):
                raise nc.TrainingError(f"non-finite training loss at epoch {epoch}")
            try:
                net, state = nc.optimizer_step(net, grads, state, adam)
            except nc.TrainingError as exc:
                raise nc.TrainingError(f"{exc} at epoch {epoch}") from None
            total += loss * len(batch)
            count += len(batch)
        train_loss = total / count
        if n_val:
            score = _rmse(predict_last(net, val.inputs), val.targets)
        else:
            score = math.sqrt(train_loss)
        if not math.isfinite(score):
            raise nc.TrainingError(f"non-finite validation loss at epoch {epoch}")
        log = EpochLog(epoch, train_loss, score)
        history.append(log)
        logger.info("epoch=%d train_loss=%.6g val_rmse=%.6g", epoch, train_loss, score)
        if on_epoch is not None:
            on_epoch(log)
        if score < best_score:
            best_score, best_net, stale = score, net.copy(), 0
        else:
            stale += 1
            if stale >= hyper.patience:
                break
    return best_net, history


class RecurrentForecaster(ForecastModel):
    """LSTM stack; ``kind`` picks depth default and the data feeding order."""

    def __init__(self, kind: str = "tprnn", w: int = 60, hyper: RecurrentHyper | None = None,
                 seed: int = 0):
        super().__init__(w, seed)
        if kind not in ("rnn", "drnn", "tprnn"):
            raise ValueError(f"unknown recurrent kind {kind!r}")
        self.kind = kind
        if hyper is None:
            hyper = RecurrentHyper(layers=1 if kind == "rnn" else 2)
        self.hyper = hyper
        self.net: nc.StackedNetParams | None = None
        self.history: list[EpochLog] = []

    @property
    def feeding(self) -> str:
        return "pooled" if self.kind == "tprnn" else "chronological"

    def hyperparameters(self):
        return asdict(self.hyper)

    def fit(self, train, on_epoch=None):
        windows = train if isinstance(train, WindowSet) else make_windows(train, self.w)
        self.net, self.history = train_network(windows, self.hyper, self.seed, self.feeding, on_epoch)
        return self

    def _predict(self, contexts):
        return predict_last(self.net, contexts)


def train_recurrent(model_kind: str, samples: WindowSet, hyper: RecurrentHyper | None = None,
                    seed: int = 0) -> RecurrentForecaster:
    """Fit the ``rnn`` (1 layer) or ``drnn`` (stacked) baseline on a chronological stream."""
    if model_kind not in ("rnn", "drnn"):
        raise ValueError("model_kind must be 'rnn' or 'drnn'")
    return RecurrentForecaster(model_kind, samples.w, hyper, seed).fit(samples)


def train_tprnn(pool_train: PoolSet, w: int = 60, hyper: RecurrentHyper | None = None,
                seed: int = 0) -> RecurrentForecaster:
    """Fit the DRNN architecture on windows shuffled across all time pools."""
    return RecurrentForecaster("tprnn", w, hyper, seed).fit(pool_train)


def make_forecaster(kind: str, w: int = 60, seed: int = 0, **hyper: Any) -> ForecastModel:
    """Build any of the five methods from flat hyperparameters (unknown keys are ignored)."""
    if kind == "arima":
        return ARIMAForecaster(w, p=hyper.get("p", 5), d=hyper.get("d", 1), seed=seed)
    if kind == "svr":
        keys = ("epsilon", "c", "epochs", "lr", "batch_size")
        names = {"epochs": "svr_epochs", "lr": "svr_lr", "batch_size": "svr_batch_size"}
        return SVRForecaster(w, seed=seed, **{k: hyper[names.get(k, k)] for k in keys
                                               if names.get(k, k) in hyper})
    if kind in ("rnn", "drnn", "tprnn"):
        fields = RecurrentHyper.__dataclass_fields__
        base = RecurrentHyper(layers=1 if kind == "rnn" else 2)
        rh = replace(base, **{k: v for k, v in hyper.items() if k in fields and v is not None})
        if kind == "rnn":
            rh = replace(rh, layers=1)
        return RecurrentForecaster(kind, w, rh, seed)
    raise ValueError(f"unknown method {kind!r}; expected one of {', '.join(METHOD_ORDER)}")


# --------------------------------------------------------------------------- evaluation


def _segments(data) -> list[Segment]:
    if isinstance(data, PoolSet):
        return data.segments()
    return sorted(data, key=lambda s: s.key)


@dataclass
class RollingForecast:
    """One-step-ahead predictions aligned index-for-index with their targets."""

    predictions: np.ndarray
    targets: np.ndarray
    windows: WindowSet
    timestamps: list = field(default_factory=list)


def rolling_forecast(model: ForecastModel | Callable, segments, w: int) -> RollingForecast:
    """Teacher-forced evaluation: every prediction conditions on true history only."""
    segs = _segments(segments)
    for s in segs:
        if len(s) < w + 1:
            raise ValueError(f"segment {s.key} has {len(s)} values, need at least w + 1 = {w + 1}")
    windows = make_windows(segs, w)
    predict = model.predict if isinstance(model, ForecastModel) else model
    preds = np.asarray(predict(windows.inputs), dtype=np.float64).reshape(len(windows))
    stamps = []
    starts = {s.key: s.start for s in segs}
    if all(v is not None for v in starts.values()):
        import datetime as dt

        for wk, slot, off in zip(windows.week_index, windows.pool_index, windows.offset):
            stamps.append(starts[(int(wk), int(slot))] + dt.timedelta(minutes=int(off) + w))
    return RollingForecast(preds, windows.targets.copy(), windows, stamps)
