"""Stacked recurrent networks with hand-derived backpropagation through time.

Two cell kinds are supported:

``lstm``
    Peephole LSTM. The three gates read the *previous* cell state::

        f_t = sig(w_fx x_t + w_fh h_{t-1} + w_fc * c_{t-1} + b_f)
        i_t = sig(w_ix x_t + w_ih h_{t-1} + w_ic * c_{t-1} + b_i)
        U_t = tanh(w_cx x_t + w_ch h_{t-1} + b_c)
        c_t = U_t i_t + c_{t-1} f_t
        o_t = sig(w_ox x_t + w_oh h_{t-1} + w_oc * c_{t-1} + b_o)
        h_t = o_t tanh(c_t)

    Peepholes are diagonal (vectors) by default, full matrices on request.

``vanilla``
    ``h_t = tanh(b + W h_{t-1} + U x_t)``.

Layer 1 reads the input sequence, layer ``l`` reads ``h_{l-1}`` at the same
step, and a linear readout ``y_t = w_yh h_top_t + b_y`` sits on the top layer.

Arrays are float64 throughout. Sequences are shaped ``(T, B, features)``;
``(T, features)`` is accepted as a batch of one.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np

CellKind = Literal["lstm", "vanilla"]

LSTM_INPUT = ("w_ix", "w_fx", "w_ox", "w_cx")
LSTM_RECURRENT = ("w_ih", "w_fh", "w_oh", "w_ch")
LSTM_PEEPHOLE = ("w_ic", "w_fc", "w_oc")
LSTM_BIAS = ("b_i", "b_f", "b_o", "b_c")


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def sigmoid(v):
    # tanh form avoids overflow warnings for large |v|
    return 0.5 * (np.tanh(0.5 * np.asarray(v, dtype=np.float64)) + 1.0)


def tanh(v):
    return np.tanh(np.asarray(v, dtype=np.float64))


# --------------------------------------------------------------------------- params


@dataclass
class LSTMLayerParams:
    w_ix: np.ndarray
    w_fx: np.ndarray
    w_ox: np.ndarray
    w_cx: np.ndarray
    w_ih: np.ndarray
    w_fh: np.ndarray
    w_oh: np.ndarray
    w_ch: np.ndarray
    w_ic: np.ndarray
    w_fc: np.ndarray
    w_oc: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray

    @property
    def hidden_size(self) -> int:
        return self.w_ix.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_ix.shape[1]

    @property
    def full_peephole(self) -> bool:
        return self.w_ic.ndim == 2

    def validate(self):
        h, n = self.hidden_size, self.input_size
        for name in LSTM_INPUT:
            _expect(name, getattr(self, name), (h, n))
        for name in LSTM_RECURRENT:
            _expect(name, getattr(self, name), (h, h))
        peep = (h, h) if self.full_peephole else (h,)
        for name in LSTM_PEEPHOLE:
            _expect(name, getattr(self, name), peep)
        for name in LSTM_BIAS:
            _expect(name, getattr(self, name), (h,))


@dataclass
class VanillaLayerParams:
    U: np.ndarray  # (hidden, input)
    W: np.ndarray  # (hidden, hidden)
    b: np.ndarray  # (hidden,)

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    @property
    def input_size(self) -> int:
        return self.U.shape[1]

    def validate(self):
        h = self.hidden_size
        _expect("U", self.U, (h, self.input_size))
        _expect("W", self.W, (h, h))
        _expect("b", self.b, (h,))


@dataclass
class OutputLayerParams:
    w_yh: np.ndarray  # (output, hidden)
    b_y: np.ndarray  # (output,)

    def validate(self):
        _expect("w_yh", self.w_yh, (self.w_yh.shape[0], self.w_yh.shape[1]))
        _expect("b_y", self.b_y, (self.w_yh.shape[0],))


@dataclass
class StackedNetParams:
    layers: list
    output: OutputLayerParams
    cell_kind: CellKind = "lstm"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.layers:
            raise ShapeError("a stacked network needs at least one layer")
        layer_type = LSTMLayerParams if self.cell_kind == "lstm" else VanillaLayerParams
        if self.cell_kind not in ("lstm", "vanilla"):
            raise ShapeError(f"unknown cell kind {self.cell_kind!r}")
        prev = None
        for k, layer in enumerate(self.layers):
            if not isinstance(layer, layer_type):
                raise ShapeError(f"layer {k} is {type(layer).__name__}, expected {layer_type.__name__}")
            layer.validate()
            if prev is not None and layer.input_size != prev:
                raise ShapeError(
                    f"layer {k} expects input size {layer.input_size}, previous layer gives {prev}"
                )
            prev = layer.hidden_size
        self.output.validate()
        if self.output.w_yh.shape[1] != prev:
            raise ShapeError(f"w_yh has {self.output.w_yh.shape[1]} columns, top layer has {prev} units")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.output.w_yh.shape[0]

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.hidden_size for layer in self.layers]

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Every parameter tensor, in a fixed order, with a dotted name."""
        for k, layer in enumerate(self.layers):
            for f in dataclasses.fields(layer):
                yield f"layers.{k}.{f.name}", getattr(layer, f.name)
        for f in dataclasses.fields(self.output):
            yield f"output.{f.name}", getattr(self.output, f.name)

    def map(self, fn) -> "StackedNetParams":
        def remap(obj):
            return type(obj)(**{f.name: fn(getattr(obj, f.name)) for f in dataclasses.fields(obj)})

        return StackedNetParams([remap(layer) for layer in self.layers], remap(self.output), self.cell_kind)

    def copy(self) -> "StackedNetParams":
        return self.map(np.array)

    def zeros_like(self) -> "StackedNetParams":
        return self.map(np.zeros_like)

    def shape_tree(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, a.shape) for name, a in self.named_arrays()]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def n_params(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def get(self, name: str) -> np.ndarray:
        return dict(self.named_arrays())[name]

    @classmethod
    def from_arrays(cls, cell_kind: CellKind, arrays: dict[str, np.ndarray]) -> "StackedNetParams":
        layer_type = LSTMLayerParams if cell_kind == "lstm" else VanillaLayerParams
        n_layers = 1 + max(int(name.split(".")[1]) for name in arrays if name.startswith("layers."))
        layers = [
            layer_type(**{f.name: arrays[f"layers.{k}.{f.name}"] for f in dataclasses.fields(layer_type)})
            for k in range(n_layers)
        ]
        output = OutputLayerParams(arrays["output.w_yh"], arrays["output.b_y"])
        return cls(layers, output, cell_kind)


def _expect(name, arr, shape):
    if not isinstance(arr, np.ndarray) or arr.shape != tuple(shape):
        got = getattr(arr, "shape", type(arr).__name__)
        raise ShapeError(f"{name} has shape {got}, expected {tuple(shape)}")


@dataclass
class CellState:
    """Per-layer hidden (and, for LSTM, cell) vectors, each shaped ``(B, hidden)``."""

    h: list
    c: list | None = None

    @classmethod
    def zeros(cls, net: StackedNetParams, batch: int = 1) -> "CellState":
        h = [np.zeros((batch, n)) for n in net.hidden_sizes]
        c = [np.zeros((batch, n)) for n in net.hidden_sizes] if net.cell_kind == "lstm" else None
        return cls(h, c)


# --------------------------------------------------------------------------- init


@dataclass(frozen=True)
class NetDims:
    input_size: int = 1
    hidden_sizes: tuple[int, ...] = (32, 32)
    output_size: int = 1
    cell_kind: CellKind = "lstm"
    full_peephole: bool = False


def init_params(dims: NetDims, seed: int) -> StackedNetParams:
    """Glorot-uniform input/recurrent/output weights, zero peepholes, zero biases, b_f = 1."""
    if dims.input_size < 1 or dims.output_size < 1 or not dims.hidden_sizes or min(dims.hidden_sizes) < 1:
        raise ShapeError(f"dimensions must be positive: {dims}")
    rng = np.random.default_rng(seed)

    def glorot(rows, cols):
        bound = np.sqrt(6.0 / (rows + cols))
        return rng.uniform(-bound, bound, size=(rows, cols))

    layers = []
    n_in = dims.input_size
    for h in dims.hidden_sizes:
        if dims.cell_kind == "lstm":
            peep = (h, h) if dims.full_peephole else (h,)
            layers.append(LSTMLayerParams(
                **{name: glorot(h, n_in) for name in LSTM_INPUT},
                **{name: glorot(h, h) for name in LSTM_RECURRENT},
                **{name: np.zeros(peep) for name in LSTM_PEEPHOLE},
                b_i=np.zeros(h), b_f=np.ones(h), b_o=np.zeros(h), b_c=np.zeros(h),
            ))
        elif dims.cell_kind == "vanilla":
            layers.append(VanillaLayerParams(U=glorot(h, n_in), W=glorot(h, h), b=np.zeros(h)))
        else:
            raise ShapeError(f"unknown cell kind {dims.cell_kind!r}")
        n_in = h
    output = OutputLayerParams(glorot(dims.output_size, n_in), np.zeros(dims.output_size))
    return StackedNetParams(layers, output, dims.cell_kind)


# --------------------------------------------------------------------------- LSTM
#
# Inside a layer arrays are laid out (T, features, B): every gate block is then
# a contiguous row slice, which matters far more for speed than the matmuls.
# Gate blocks are stacked i, f, o, U so one tanh call covers all four
# (sigmoid(x) = 0.5 tanh(x/2) + 0.5).


@dataclass
class GateRecord:
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    U: np.ndarray


def _stack_input(p):
    return np.concatenate([getattr(p, n) for n in LSTM_INPUT], axis=0)


def _stack_recurrent(p):
    return np.concatenate([getattr(p, n) for n in LSTM_RECURRENT], axis=0)


def _stack_bias(p):
    return np.concatenate([getattr(p, n) for n in LSTM_BIAS])


def _stack_peephole(p):
    return np.stack([getattr(p, n) for n in LSTM_PEEPHOLE])  # (3, H) or (3, H, H)


def _shifted(seq, first):
    """``seq`` delayed by one step, ``first`` filling step 0."""
    out = np.empty_like(seq)
    out[0] = first
    out[1:] = seq[:-1]
    return out


@dataclass
class _LSTMCache:
    x: np.ndarray  # (T, I, B)
    h0: np.ndarray  # (H, B)
    c0: np.ndarray
    gates: np.ndarray  # (T, 4H, B) activated i, f, o, U
    c: np.ndarray
    tc: np.ndarray  # tanh(c)
    h: np.ndarray


def _lstm_layer_forward(p: LSTMLayerParams, X, h0, c0):
    T, _, B = X.shape
    H = p.hidden_size
    Wh = _stack_recurrent(p)
    P = _stack_peephole(p)
    full = p.full_peephole
    ZX = np.matmul(_stack_input(p), X)
    ZX += _stack_bias(p)[:, None]
    Pc = None if full else P[:, :, None]
    cache = _LSTMCache(X, h0, c0, ZX, *(np.empty((T, H, B)) for _ in range(3)))
    h, c = h0, c0
    for t in range(T):
        z = cache.gates[t]
        z += Wh @ h
        sig = z[: 3 * H]
        sig3 = sig.reshape(3, H, B)
        sig3 += np.matmul(P, c) if full else Pc * c
        sig *= 0.5
        np.tanh(z, out=z)
        sig *= 0.5
        sig += 0.5
        i, f, o, u = z[:H], z[H : 2 * H], z[2 * H : 3 * H], z[3 * H :]
        cn = cache.c[t]
        np.multiply(u, i, out=cn)
        cn += f * c
        np.tanh(cn, out=cache.tc[t])
        np.multiply(o, cache.tc[t], out=cache.h[t])
        h, c = cache.h[t], cn
    return cache.h, cache


def lstm_cell_forward(params: LSTMLayerParams, x_t, h_prev, c_prev):
    """One LSTM step. Returns ``(h_t, c_t, GateRecord)``; works on vectors or ``(B, n)`` batches."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    params.validate()
    if x_t.shape[-1] != params.input_size:
        raise ShapeError(f"x_t has {x_t.shape[-1]} features, layer expects {params.input_size}")
    for name, a in (("h_prev", h_prev), ("c_prev", c_prev)):
        if a.shape[-1] != params.hidden_size:
            raise ShapeError(f"{name} has {a.shape[-1]} units, layer has {params.hidden_size}")
    single = x_t.ndim == 1
    x, h0, c0 = (np.atleast_2d(a) for a in (x_t, h_prev, c_prev))
    if not (x.shape[0] == h0.shape[0] == c0.shape[0]):
        raise ShapeError("x_t, h_prev and c_prev disagree on batch size")
    _, cache = _lstm_layer_forward(params, np.ascontiguousarray(x.T)[None], h0.T.copy(), c0.T.copy())
    H = params.hidden_size
    g = cache.gates[0]
    pick = (lambda a: a[:, 0].copy()) if single else (lambda a: a.T.copy())
    return (pick(cache.h[0]), pick(cache.c[0]),
            GateRecord(*(pick(g[k * H : (k + 1) * H]) for k in range(4))))


def _lstm_layer_backward(p: LSTMLayerParams, cache: _LSTMCache, dHs):
    T, H, B = dHs.shape
    Wh_T = _stack_recurrent(p).T.copy()
    P = _stack_peephole(p)
    full = p.full_peephole
    P_T = P.transpose(0, 2, 1).copy() if full else P[:, :, None]
    dZ = np.empty((T, 4 * H, B))
    dh_next = np.zeros((H, B))
    dc_next = np.zeros((H, B))
    for t in range(T - 1, -1, -1):
        g = cache.gates[t]
        i, f, u = g[:H], g[H : 2 * H], g[3 * H :]
        tc = cache.tc[t]
        c_prev = cache.c[t - 1] if t else cache.c0
        dh = dHs[t] + dh_next
        dc = 1.0 - tc * tc
        dc *= g[2 * H : 3 * H]
        dc *= dh
        dc += dc_next
        dz = dZ[t]
        np.multiply(dc, u, out=dz[:H])
        np.multiply(dc, c_prev, out=dz[H : 2 * H])
        np.multiply(dh, tc, out=dz[2 * H : 3 * H])
        sg = g[: 3 * H]
        dz[: 3 * H] *= sg - sg * sg
        du = dz[3 * H :]
        np.multiply(dc, i, out=du)
        du *= 1.0 - u * u
        dz3 = dz[: 3 * H].reshape(3, H, B)
        if full:
            peep = np.matmul(P_T, dz3).sum(axis=0)
        else:
            peep = (P_T * dz3).sum(axis=0)
        dc_next = dc * f
        dc_next += peep
        dh_next = Wh_T @ dz
    return _lstm_param_grads(p, cache, dZ)


def _lstm_param_grads(p: LSTMLayerParams, cache: _LSTMCache, dZ):
    T, G, B = dZ.shape
    H = G // 4
    dWx = np.tensordot(dZ, cache.x, axes=([0, 2], [0, 2]))
    dWh = np.tensordot(dZ, _shifted(cache.h, cache.h0), axes=([0, 2], [0, 2]))
    db = dZ.sum(axis=(0, 2))
    c_prev = _shifted(cache.c, cache.c0)
    grads = {}
    for k, (nx, nh, nb) in enumerate(zip(LSTM_INPUT, LSTM_RECURRENT, LSTM_BIAS)):
        grads[nx] = dWx[k * H : (k + 1) * H]
        grads[nh] = dWh[k * H : (k + 1) * H]
        grads[nb] = db[k * H : (k + 1) * H]
    for k, name in enumerate(LSTM_PEEPHOLE):
        dz = dZ[:, k * H : (k + 1) * H]
        if p.full_peephole:
            grads[name] = np.tensordot(dz, c_prev, axes=([0, 2], [0, 2]))
        else:
            grads[name] = np.einsum("thb,thb->h", dz, c_prev)
    dX = np.matmul(_stack_input(p).T, dZ)
    return dX, LSTMLayerParams(**grads)


# --------------------------------------------------------------------------- vanilla


@dataclass
class _VanillaCache:
    x: np.ndarray  # (T, I, B)
    h0: np.ndarray
    h: np.ndarray


def _vanilla_layer_forward(p: VanillaLayerParams, X, h0):
    A = np.matmul(p.U, X)
    A += p.b[:, None]
    h = h0
    for t in range(X.shape[0]):
        a = A[t]
        a += p.W @ h
        np.tanh(a, out=a)
        h = a
    return A, _VanillaCache(X, h0, A)


def _vanilla_layer_backward(p: VanillaLayerParams, cache: _VanillaCache, dHs):
    T, H, B = dHs.shape
    W_T = p.W.T.copy()
    dA = np.empty((T, H, B))
    dh_next = np.zeros((H, B))
    for t in range(T - 1, -1, -1):
        h = cache.h[t]
        da = dA[t]
        np.add(dHs[t], dh_next, out=da)
        da *= 1.0 - h * h
        dh_next = W_T @ da
    grads = VanillaLayerParams(
        U=np.tensordot(dA, cache.x, axes=([0, 2], [0, 2])),
        W=np.tensordot(dA, _shifted(cache.h, cache.h0), axes=([0, 2], [0, 2])),
        b=dA.sum(axis=(0, 2)),
    )
    return np.matmul(p.U.T, dA), grads


# --------------------------------------------------------------------------- network


@dataclass
class Trace:
    """Everything backward_bptt needs; produced by stacked_forward."""

    net_id: int
    batched: bool
    layer_caches: list
    top_h: np.ndarray  # (T, H, B)
    y: np.ndarray  # (T, B, O)


def _as_batch(seq, n_features, what):
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim == 2:
        seq, batched = seq[:, None, :], False
    elif seq.ndim == 3:
        batched = True
    else:
        raise ShapeError(f"{what} must be (T, features) or (T, B, features), got shape {seq.shape}")
    if seq.shape[0] < 1:
        raise ShapeError(f"{what} needs at least one time step")
    if seq.shape[1] < 1:
        raise ShapeError(f"{what} has an empty batch")
    if seq.shape[2] != n_features:
        raise ShapeError(f"{what} has {seq.shape[2]} features, expected {n_features}")
    return seq, batched


def _check_state(net, state, batch):
    sizes = net.hidden_sizes
    if len(state.h) != len(sizes):
        raise ShapeError(f"initial state has {len(state.h)} layers, net has {len(sizes)}")
    states = [state.h] + ([state.c] if net.cell_kind == "lstm" else [])
    if net.cell_kind == "lstm" and (state.c is None or len(state.c) != len(sizes)):
        raise ShapeError("LSTM initial state needs one cell vector per layer")
    out = []
    for vecs in states:
        fixed = []
        for k, (v, n) in enumerate(zip(vecs, sizes)):
            v = np.asarray(v, dtype=np.float64)
            if v.ndim == 1:
                v = np.broadcast_to(v, (batch, v.shape[0]))
            if v.shape != (batch, n):
                raise ShapeError(f"initial state for layer {k} has shape {v.shape}, expected {(batch, n)}")
            fixed.append(np.ascontiguousarray(v.T))
        out.append(fixed)
    return out


def stacked_forward(net: StackedNetParams, sequence, initial: CellState | None = None):
    """Run the network over a sequence. Returns ``(y, trace)``; ``y`` mirrors the input layout."""
    net.validate()
    X, batched = _as_batch(sequence, net.input_size, "input sequence")
    B = X.shape[1]
    if initial is None:
        initial = CellState.zeros(net, B)
    states = _check_state(net, initial, B)
    X = np.ascontiguousarray(X.transpose(0, 2, 1))
    caches = []
    for k, layer in enumerate(net.layers):
        if net.cell_kind == "lstm":
            X, cache = _lstm_layer_forward(layer, X, states[0][k], states[1][k])
        else:
            X, cache = _vanilla_layer_forward(layer, X, states[0][k])
        caches.append(cache)
    y = np.matmul(net.output.w_yh, X)
    y += net.output.b_y[:, None]
    y = y.transpose(0, 2, 1)
    trace = Trace(id(net), batched, caches, X, y)
    return (y if batched else y[:, 0, :]), trace


def mse_loss(y, y_target) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_target = np.asarray(y_target, dtype=np.float64)
    if y.shape != y_target.shape:
        raise ShapeError(f"prediction shape {y.shape} != target shape {y_target.shape}")
    if y.size == 0:
        raise ShapeError("empty prediction")
    d = y - y_target
    return float(np.mean(d * d))


def backward_bptt(net: StackedNetParams, trace: Trace, y_target) -> StackedNetParams:
    """Exact gradient of ``mse_loss(y, y_target)`` w.r.t. every parameter of ``net``."""
    if trace.net_id != id(net):
        raise ShapeError("trace was produced by a different network")
    y_target = np.asarray(y_target, dtype=np.float64)
    if not trace.batched:
        y_target = y_target[:, None, :] if y_target.ndim == 2 else y_target
    if y_target.shape != trace.y.shape:
        raise ShapeError(f"target shape {y_target.shape} != output shape {trace.y.shape}")
    T, B, O = trace.y.shape
    dY = (trace.y - y_target).transpose(0, 2, 1) * (2.0 / (T * B * O))  # (T, O, B)
    out_grad = OutputLayerParams(np.tensordot(dY, trace.top_h, axes=([0, 2], [0, 2])),
                                 dY.sum(axis=(0, 2)))
    dX = np.matmul(net.output.w_yh.T, dY)
    layer_grads = []
    for layer, cache in zip(reversed(net.layers), reversed(trace.layer_caches)):
        if net.cell_kind == "lstm":
            dX, g = _lstm_layer_backward(layer, cache, dX)
        else:
            dX, g = _vanilla_layer_backward(layer, cache, dX)
        layer_grads.append(g)
    return StackedNetParams(layer_grads[::-1], out_grad, net.cell_kind)


def loss_and_grad(net: StackedNetParams, sequence, y_target):
    y, trace = stacked_forward(net, sequence)
    return mse_loss(y, y_target), backward_bptt(net, trace, y_target)

# --------------------------------------------------------------------------- grad check


@dataclass
class GradCheckReport:
    max_rel_error: float
    param: str
    index: tuple
    analytic: float
    numeric: float
    n_checked: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(net, sequence, y_target, step: float = 1e-5, grads: StackedNetParams | None = None,
               params: Sequence[str] | None = None) -> GradCheckReport:
    """Compare BPTT against central differences on every parameter coordinate.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``; the
    worst one is reported. ``grads`` overrides the analytic gradient (for
    fault-injection tests), ``params`` restricts the check to named tensors.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if grads is None:
        _, grads = loss_and_grad(net, sequence, y_target)
    probe = net.copy()
    analytic = dict(grads.named_arrays())
    worst = GradCheckReport(0.0, "", (), 0.0, 0.0, 0)
    count = 0
    for name, arr in probe.named_arrays():
        if params is not None and name not in params:
            continue
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            plus = mse_loss(stacked_forward(probe, sequence)[0], y_target)
            arr[idx] = orig - step
            minus = mse_loss(stacked_forward(probe, sequence)[0], y_target)
            arr[idx] = orig
            numeric = (plus - minus) / (2 * step)
            a = float(analytic[name][idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            count += 1
            if rel > worst.max_rel_error or not worst.param:
                worst = GradCheckReport(rel, name, idx, a, numeric, 0)
    worst.n_checked = count
    return worst


# --------------------------------------------------------------------------- optimizer


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 5.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class AdamState:
    m: StackedNetParams
    v: StackedNetParams
    t: int = 0

    @classmethod
    def zeros(cls, params: StackedNetParams) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0)


def global_norm(grads: StackedNetParams) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for _, g in grads.named_arrays())))


def clip_by_global_norm(grads: StackedNetParams, clip_norm: float | None):
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise TrainingError("non-finite gradient")
    if clip_norm is not None and norm > clip_norm:
        scale = clip_norm / norm
        return grads.map(lambda g: g * scale), norm
    return grads, norm


def optimizer_step(params: StackedNetParams, grads: StackedNetParams, state: AdamState,
                   hyper: AdamHyper = AdamHyper()) -> tuple[StackedNetParams, AdamState]:
    """Bias-corrected Adam update after global-norm clipping. Inputs are not mutated."""
    grads, _ = clip_by_global_norm(grads, hyper.clip_norm)
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    m_old, v_old = dict(state.m.named_arrays()), dict(state.v.named_arrays())
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    for (name, p), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
        m = hyper.beta1 * m_old[name] + (1.0 - hyper.beta1) * g
        v = hyper.beta2 * v_old[name] + (1.0 - hyper.beta2) * g * g
        new_p[name] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_m[name], new_v[name] = m, v
    kind = params.cell_kind
    return (
        StackedNetParams.from_arrays(kind, new_p),
        AdamState(StackedNetParams.from_arrays(kind, new_m), StackedNetParams.from_arrays(kind, new_v), t),
    )
