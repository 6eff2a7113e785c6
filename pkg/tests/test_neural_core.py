import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tprnn.neural_core import (
    AdamHyper,
    AdamState,
    CellState,
    LSTMLayerParams,
    NetDims,
    OutputLayerParams,
    ShapeError,
    StackedNetParams,
    TrainingError,
    VanillaLayerParams,
    backward_bptt,
    clip_by_global_norm,
    global_norm,
    grad_check,
    init_params,
    loss_and_grad,
    lstm_cell_forward,
    mse_loss,
    optimizer_step,
    sigmoid,
    stacked_forward,
    tanh,
)


def perturbed(dims, seed, scale=0.3):
    rng = np.random.default_rng(seed + 1000)
    return init_params(dims, seed).map(lambda a: a + rng.normal(0, scale, a.shape))


def zero_lstm(h=3, n=2):
    return init_params(NetDims(n, (h,), 1), 0).map(np.zeros_like).layers[0]


def naive_lstm_step(p, x, h, c):
    """Plain transcription of the cell equations, one vector at a time."""
    peep = (lambda w, v: w @ v) if p.w_ic.ndim == 2 else (lambda w, v: w * v)
    s = lambda v: 1.0 / (1.0 + math.e ** (-v))
    f = s(p.w_fx @ x + p.w_fh @ h + peep(p.w_fc, c) + p.b_f)
    i = s(p.w_ix @ x + p.w_ih @ h + peep(p.w_ic, c) + p.b_i)
    u = np.tanh(p.w_cx @ x + p.w_ch @ h + p.b_c)
    c_new = u * i + c * f
    o = s(p.w_ox @ x + p.w_oh @ h + peep(p.w_oc, c) + p.b_o)
    return o * np.tanh(c_new), c_new, (i, f, o, u)


def naive_forward(net, xs):
    hs = [np.zeros(n) for n in net.hidden_sizes]
    cs = [np.zeros(n) for n in net.hidden_sizes]
    out = []
    for x in xs:
        inp = x
        for k, layer in enumerate(net.layers):
            if net.cell_kind == "lstm":
                hs[k], cs[k], _ = naive_lstm_step(layer, inp, hs[k], cs[k])
            else:
                hs[k] = np.tanh(layer.b + layer.W @ hs[k] + layer.U @ inp)
            inp = hs[k]
        out.append(net.output.w_yh @ inp + net.output.b_y)
    return np.array(out)


# ---------------------------------------------------------------- activations

def test_activation_values():
    assert sigmoid(0.0) == 0.5
    assert tanh(0.0) == 0.0
    assert sigmoid(2.0) == pytest.approx(0.880797, abs=5e-7)
    assert sigmoid(2.0) == pytest.approx(1 / (1 + math.exp(-2)), rel=1e-15)
    big = sigmoid(np.array([-800.0, 800.0]))
    assert big[0] == 0.0 and big[1] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
def test_activation_ranges(v):
    s, t = sigmoid(v), tanh(v)
    assert np.all((s >= 0) & (s <= 1))
    assert np.all((t >= -1) & (t <= 1))
    assert np.allclose(s, 1 / (1 + np.exp(-np.array(v))), rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- cell

def test_zero_params_fixed_point():
    p = zero_lstm()
    h, c, g = lstm_cell_forward(p, np.array([0.3, -2.0]), np.zeros(3), np.zeros(3))
    for gate in (g.i, g.f, g.o):
        assert np.array_equal(gate, np.full(3, 0.5))
    assert np.array_equal(g.U, np.zeros(3))
    assert np.array_equal(c, np.zeros(3)) and np.array_equal(h, np.zeros(3))


def test_zero_params_forget_path():
    cvec = np.array([1.0, -2.0, 0.25])
    _, c, _ = lstm_cell_forward(zero_lstm(), np.array([5.0, 1.0]), np.zeros(3), cvec)
    assert np.array_equal(c, 0.5 * cvec)


def test_scalar_unit_weights():
    one = np.ones((1, 1))
    p = LSTMLayerParams(one, one, one, one, one, one, one, one, np.ones(1), np.ones(1), np.ones(1),
                        np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
    h, c, g = lstm_cell_forward(p, np.zeros(1), np.zeros(1), np.zeros(1))
    assert (g.f[0], g.i[0], g.o[0], g.U[0], c[0], h[0]) == (0.5, 0.5, 0.5, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("full", [False, True])
def test_cell_matches_naive(full):
    net = perturbed(NetDims(2, (4,), 1, full_peephole=full), 5, 0.5)
    p = net.layers[0]
    rng = np.random.default_rng(0)
    x, h0, c0 = rng.normal(size=2), rng.normal(size=4), rng.normal(size=4)
    h, c, g = lstm_cell_forward(p, x, h0, c0)
    hn, cn, (i, f, o, u) = naive_lstm_step(p, x, h0, c0)
    assert np.allclose(h, hn, atol=1e-14) and np.allclose(c, cn, atol=1e-14)
    for got, want in zip((g.i, g.f, g.o, g.U), (i, f, o, u)):
        assert np.allclose(got, want, atol=1e-14)


def test_cell_batch_rows():
    p = perturbed(NetDims(1, (3,), 1), 2).layers[0]
    x = np.array([[0.1], [0.7]])
    h0 = np.array([[0.0, 0.1, 0.2], [0.3, -0.1, 0.5]])
    c0 = -h0
    hb, cb, gb = lstm_cell_forward(p, x, h0, c0)
    for r in range(2):
        h, c, g = lstm_cell_forward(p, x[r], h0[r], c0[r])
        assert np.allclose(hb[r], h, atol=1e-15) and np.allclose(gb.f[r], g.f, atol=1e-15)


def test_cell_shape_errors():
    p = zero_lstm()
    with pytest.raises(ShapeError):
        lstm_cell_forward(p, np.zeros(3), np.zeros(3), np.zeros(3))
    with pytest.raises(ShapeError):
        lstm_cell_forward(p, np.zeros(2), np.zeros(2), np.zeros(3))
    with pytest.raises(ShapeError):
        lstm_cell_forward(p, np.zeros((2, 2)), np.zeros((3, 3)), np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0))
def test_gate_ranges(seed, scale):
    p = perturbed(NetDims(2, (5,), 1), seed, scale).layers[0]
    rng = np.random.default_rng(seed)
    _, _, g = lstm_cell_forward(p, rng.normal(0, 3, 2), rng.normal(0, 1, 5), rng.normal(0, 3, 5))
    for gate in (g.i, g.f, g.o):
        assert np.all((gate >= 0) & (gate <= 1))
    assert np.all((g.U >= -1) & (g.U <= 1))


# ---------------------------------------------------------------- stacked forward

def test_zero_vanilla_net():
    net = init_params(NetDims(1, (4,), 1, "vanilla"), 0).map(np.zeros_like)
    y, _ = stacked_forward(net, np.random.default_rng(0).normal(size=(7, 1)))
    assert np.array_equal(y, np.zeros((7, 1)))


def test_two_layer_vanilla_hand_values():
    layer = VanillaLayerParams(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1))
    net = StackedNetParams([layer, VanillaLayerParams(np.ones((1, 1)), np.ones((1, 1)), np.zeros(1))],
                           OutputLayerParams(np.ones((1, 1)), np.zeros(1)), "vanilla")
    y, trace = stacked_forward(net, np.array([[1.0]]))
    assert trace.layer_caches[0].h[0, 0, 0] == pytest.approx(0.76159, abs=5e-6)
    # tanh(tanh(1)) = tanh(0.761594...) = 0.642015...
    assert y[0, 0] == pytest.approx(0.642015, abs=5e-7)
    assert y[0, 0] == math.tanh(math.tanh(1.0))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.sampled_from(["lstm", "vanilla"]), st.integers(0, 10**6))
def test_zero_net_stays_zero(T, kind, seed):
    net = init_params(NetDims(2, (3, 4), 2, kind), 0).map(np.zeros_like)
    x = np.random.default_rng(seed).normal(0, 10, size=(T, 3, 2))
    y, trace = stacked_forward(net, x)
    assert not y.any()
    for cache in trace.layer_caches:
        assert not cache.h.any()
        if kind == "lstm":
            assert not cache.c.any()


@pytest.mark.parametrize("kind, full", [("lstm", False), ("lstm", True), ("vanilla", False)])
def test_forward_matches_naive(kind, full):
    net = perturbed(NetDims(1, (5, 3, 4), 2, kind, full), 11, 0.4)
    xs = np.random.default_rng(1).normal(size=(9, 1))
    y, _ = stacked_forward(net, xs)
    assert np.allclose(y, naive_forward(net, xs), atol=1e-13)


def test_batch_equals_single_runs():
    net = perturbed(NetDims(1, (4, 4), 1), 3)
    x = np.random.default_rng(2).normal(size=(6, 5, 1))
    yb, _ = stacked_forward(net, x)
    for b in range(5):
        ys, _ = stacked_forward(net, x[:, b, :])
        assert np.allclose(yb[:, b, :], ys, atol=1e-15)


def test_forward_deterministic():
    net = perturbed(NetDims(1, (6, 6), 1), 4)
    x = np.random.default_rng(3).normal(size=(20, 8, 1))
    a, _ = stacked_forward(net, x)
    b, _ = stacked_forward(net.copy(), x.copy())
    assert a.tobytes() == b.tobytes()


def test_initial_state_used():
    net = perturbed(NetDims(1, (3,), 1), 0)
    x = np.zeros((2, 1))
    y0, _ = stacked_forward(net, x)
    y1, _ = stacked_forward(net, x, CellState([np.ones(3)], [np.ones(3)]))
    assert not np.allclose(y0, y1)


def shape_cases():
    net = init_params(NetDims(2, (3, 4), 1), 0)
    good_state = CellState.zeros(net, 5)
    yield "1-D input", net, np.zeros(6), None
    yield "4-D input", net, np.zeros((6, 5, 2, 1)), None
    yield "scalar input", net, np.float64(1.0), None
    yield "T=0", net, np.zeros((0, 5, 2)), None
    yield "B=0", net, np.zeros((6, 0, 2)), None
    for f in (1, 3, 7):
        yield f"{f} features", net, np.zeros((6, 5, f)), None
        yield f"{f} features unbatched", net, np.zeros((6, f)), None
    yield "state wrong batch", net, np.zeros((6, 4, 2)), good_state
    yield "state one layer", net, np.zeros((6, 5, 2)), CellState(good_state.h[:1], good_state.c[:1])
    yield "state no cell", net, np.zeros((6, 5, 2)), CellState(good_state.h, None)
    yield "state wrong width", net, np.zeros((6, 5, 2)), CellState([np.zeros((5, 4)), np.zeros((5, 4))],
                                                                   good_state.c)


@pytest.mark.parametrize("label, net, seq, state", list(shape_cases()), ids=lambda v: v if isinstance(v, str) else "")
def test_shape_rejections(label, net, seq, state):
    with pytest.raises(ShapeError):
        stacked_forward(net, seq, state)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 4), st.integers(0, 3), st.integers(0, 3), st.integers(1, 4))
def test_generated_feature_mismatch(n_in, T, B, feats):
    net = init_params(NetDims(n_in, (3,), 1), 0)
    seq = np.zeros((T, B, feats))
    if T >= 1 and B >= 1 and feats == n_in:
        stacked_forward(net, seq)
    else:
        with pytest.raises(ShapeError):
            stacked_forward(net, seq)


def test_inconsistent_layers():
    a = init_params(NetDims(1, (3,), 1), 0)
    b = init_params(NetDims(1, (4,), 1), 0)
    with pytest.raises(ShapeError):
        StackedNetParams([a.layers[0], b.layers[0]], a.output)
    with pytest.raises(ShapeError):
        StackedNetParams([a.layers[0]], b.output)
    with pytest.raises(ShapeError):
        StackedNetParams([], a.output)
    with pytest.raises(ShapeError):
        StackedNetParams(a.layers, a.output, "vanilla")


# ---------------------------------------------------------------- loss

def test_mse_examples():
    assert mse_loss([[1.0], [2.0]], [[1.0], [2.0]]) == 0.0
    assert mse_loss([0.0], [2.0]) == 4.0
    assert mse_loss([1.0, 2.0], [0.0, 0.0]) == 2.5
    with pytest.raises(ShapeError):
        mse_loss([1.0, 2.0], [1.0])


# ---------------------------------------------------------------- gradients

def test_zero_net_zero_gradients():
    for kind in ("lstm", "vanilla"):
        net = init_params(NetDims(1, (3, 3), 1, kind), 0).map(np.zeros_like)
        _, grads = loss_and_grad(net, np.zeros((5, 1)), np.zeros((5, 1)))
        assert all(not g.any() for _, g in grads.named_arrays())


def test_output_bias_gradient():
    net = perturbed(NetDims(1, (4,), 1), 9)
    x = np.random.default_rng(0).normal(size=(8, 1))
    tgt = np.random.default_rng(1).normal(size=(8, 1))
    y, trace = stacked_forward(net, x)
    grads = backward_bptt(net, trace, tgt)
    assert grads.output.b_y[0] == pytest.approx(np.mean(2 * (y - tgt)), rel=1e-12)


@pytest.mark.parametrize("kind", ["lstm", "vanilla"])
def test_grad_check_hidden8_T16(kind):
    net = perturbed(NetDims(1, (8,), 1, kind), 21)
    rng = np.random.default_rng(5)
    report = grad_check(net, rng.uniform(size=(16, 1)), rng.uniform(size=(16, 1)), step=1e-5)
    assert report.n_checked == net.n_params()
    assert report.passed(1e-4), report


def test_grad_check_full_peephole_batched():
    net = perturbed(NetDims(2, (4, 3), 2, full_peephole=True), 8)
    rng = np.random.default_rng(6)
    report = grad_check(net, rng.uniform(size=(6, 3, 2)), rng.uniform(size=(6, 3, 2)))
    assert report.passed(1e-4), report


def test_grad_check_detects_zeroed_peephole():
    net = perturbed(NetDims(1, (4,), 1), 13, 0.5)
    rng = np.random.default_rng(7)
    x, tgt = rng.uniform(size=(10, 1)), rng.uniform(size=(10, 1))
    _, grads = loss_and_grad(net, x, tgt)
    grads.layers[0].w_fc[:] = 0.0
    report = grad_check(net, x, tgt, grads=grads)
    assert report.param == "layers.0.w_fc"
    assert report.max_rel_error > 0.5


def test_grad_check_scalar_vanilla_T1():
    net = StackedNetParams([VanillaLayerParams(np.array([[0.7]]), np.array([[-0.4]]), np.array([0.1]))],
                           OutputLayerParams(np.array([[1.3]]), np.array([0.2])), "vanilla")
    report = grad_check(net, np.array([[0.5]]), np.array([[0.9]]))
    assert report.max_rel_error < 1e-7


def test_trace_from_other_net():
    a = perturbed(NetDims(1, (3,), 1), 0)
    b = a.copy()
    _, trace = stacked_forward(a, np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        backward_bptt(b, trace, np.zeros((3, 1)))
    with pytest.raises(ShapeError):
        backward_bptt(a, trace, np.zeros((4, 1)))


def test_small_step_does_not_increase_loss():
    rng = np.random.default_rng(0)
    for k in range(10):
        kind = ("lstm", "vanilla")[k % 2]
        net = perturbed(NetDims(1, (int(rng.integers(3, 7)),) * int(rng.integers(1, 3)), 1, kind), k)
        x = rng.uniform(size=(12, 4, 1))
        tgt = rng.uniform(size=(12, 4, 1))
        before, grads = loss_and_grad(net, x, tgt)
        stepped, _ = optimizer_step(net, grads, AdamState.zeros(net), AdamHyper(lr=1e-4))
        after = mse_loss(stacked_forward(stepped, x)[0], tgt)
        assert after <= before


# ---------------------------------------------------------------- optimizer

def scalar_net(value=0.0):
    a = np.array([[value]])
    return StackedNetParams([VanillaLayerParams(a.copy(), a.copy(), np.array([value]))],
                            OutputLayerParams(a.copy(), np.array([value])), "vanilla")


def test_zero_gradient_leaves_params():
    net = perturbed(NetDims(1, (3,), 1), 0)
    new, state = optimizer_step(net, net.zeros_like(), AdamState.zeros(net))
    assert new.flat().tobytes() == net.flat().tobytes()
    assert state.t == 1


def test_clipping_scales_by_tenth():
    g = scalar_net().map(lambda a: np.full_like(a, 10.0 / math.sqrt(5)))
    assert global_norm(g) == pytest.approx(10.0)
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == pytest.approx(10.0)
    assert np.allclose(clipped.flat(), 0.1 * g.flat(), rtol=1e-15)
    same, _ = clip_by_global_norm(g, 100.0)
    assert same is g


def test_first_step_displacement():
    net = scalar_net(0.0)
    grads = net.map(np.ones_like)
    new, _ = optimizer_step(net, grads, AdamState.zeros(net), AdamHyper(lr=0.1, clip_norm=None))
    assert np.allclose(new.flat(), -0.1, rtol=1e-6)


def test_non_finite_gradient_aborts():
    net = scalar_net(0.0)
    grads = net.map(lambda a: np.full_like(a, np.nan))
    with pytest.raises(TrainingError):
        optimizer_step(net, grads, AdamState.zeros(net))


def test_optimizer_deterministic_and_pure():
    net = perturbed(NetDims(1, (4,), 1), 1)
    grads = perturbed(NetDims(1, (4,), 1), 2)
    snapshot = net.flat().copy()
    state = AdamState.zeros(net)
    a, sa = optimizer_step(net, grads, state)
    b, sb = optimizer_step(net, grads, state)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert np.array_equal(net.flat(), snapshot)
    assert state.t == 0 and sa.t == sb.t == 1


def test_bad_learning_rate():
    with pytest.raises(ValueError):
        AdamHyper(lr=0.0)


# ---------------------------------------------------------------- init

def test_init_reproducible():
    a = init_params(NetDims(1, (32, 32), 1), 42)
    b = init_params(NetDims(1, (32, 32), 1), 42)
    c = init_params(NetDims(1, (32, 32), 1), 43)
    assert a.flat().tobytes() == b.flat().tobytes()
    assert a.flat().tobytes() != c.flat().tobytes()


def test_init_biases_and_peepholes():
    net = init_params(NetDims(1, (32, 16), 1), 0)
    for layer in net.layers:
        assert np.all(layer.b_f == 1.0)
        for name in ("b_i", "b_o", "b_c", "w_ic", "w_fc", "w_oc"):
            assert not getattr(layer, name).any()
    assert not net.output.b_y.any()


def test_init_bounds():
    net = init_params(NetDims(1, (32,), 1), 0)
    p = net.layers[0]
    assert p.w_ix.shape == (32, 1)
    assert np.all(np.abs(p.w_ix) <= (6 / 33) ** 0.5)
    assert np.all(np.abs(p.w_fh) <= (6 / 64) ** 0.5)
    assert np.abs(p.w_ix).max() > 0.5 * (6 / 33) ** 0.5


def test_init_rejects_bad_dims():
    with pytest.raises(ShapeError):
        init_params(NetDims(0, (3,), 1), 0)
    with pytest.raises(ShapeError):
        init_params(NetDims(1, (), 1), 0)


def test_params_round_trip_through_arrays():
    net = perturbed(NetDims(1, (3, 2), 1, full_peephole=True), 0)
    again = StackedNetParams.from_arrays("lstm", dict(net.named_arrays()))
    assert again.shape_tree() == net.shape_tree()
    assert again.flat().tobytes() == net.flat().tobytes()
