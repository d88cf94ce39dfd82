import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from itpnet.numerics import AdamState, NumericError, Tape, Tensor, adam_update, grad_check, layers, ops
from itpnet.numerics import suite
from itpnet.numerics.layers import feed_forward, lstm_step, self_attention


def t(x, grad=True):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def smooth_l1_oracle(v):
    s = float(np.sum(np.abs(v)))
    return 0.5 * s * s if s < 1.0 else s - 0.5


# -- smooth_l1 -----------------------------------------------------------------


@pytest.mark.parametrize(
    "v, expected",
    [([0.0, 0.0, 0.0], 0.0), ([2.0], 1.5), ([0.3, 0.4], 0.245)],
)
def test_smooth_l1_examples(v, expected):
    got = float(ops.smooth_l1(t(v)).data)
    assert got == pytest.approx(expected, abs=1e-12)


@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-5, 5)))
def test_smooth_l1_matches_oracle_and_is_nonnegative(v):
    got = float(ops.smooth_l1(t(v)).data)
    assert got >= 0.0
    assert got == pytest.approx(smooth_l1_oracle(v), rel=1e-12, abs=1e-12)


def test_smooth_l1_rejects_non_finite():
    with pytest.raises(NumericError):
        ops.smooth_l1(t([np.inf, 0.0]))


def test_smooth_l1_value_and_slope_continuous_at_one():
    h = 1e-7
    f = lambda s: float(ops.smooth_l1(t([s])).data)
    assert f(1.0 - 1e-12) == pytest.approx(f(1.0), abs=1e-11)
    left = (f(1.0) - f(1.0 - h)) / h
    right = (f(1.0 + h) - f(1.0)) / h
    assert abs(left - right) < 1e-6


@pytest.mark.parametrize("s", [0.5, 2.0])
def test_smooth_l1_gradcheck_both_branches(s):
    v = t([s * 0.25, -s * 0.75])
    rep = grad_check(lambda: ops.smooth_l1(v), [v])
    assert rep.max_rel_error < 1e-6


# -- grad_check ------------------------------------------------------------------


def test_grad_check_exact_quadratic(rng):
    x = t(rng.normal(size=7))
    rep = grad_check(lambda: ops.sum(ops.mul(x, x)), [x])
    assert rep.max_rel_error < 1e-7
    assert rep.n_checked == 7


def test_grad_check_rejects_bad_eps():
    x = t([1.0])
    with pytest.raises(ValueError):
        grad_check(lambda: ops.sum(x), [x], eps=0.0)


def test_grad_check_non_finite_raises():
    x = t([1.0])
    with pytest.raises(NumericError):
        grad_check(lambda: ops.log(ops.sub(x, 1.0)), [x])


@pytest.mark.parametrize("name", sorted(suite.PRIMITIVES))
def test_primitive_gradients_on_100_points(name):
    assert suite.check_primitive(name, n_points=100) < 1e-5


def test_attention_gradcheck_d8_two_heads_step_1e6(rng):
    p = layers.init_self_attention(rng, 8)
    for v in layers.flatten(p).values():
        v.data = v.data + 0.1 * rng.normal(size=v.shape)
    x = t(rng.normal(size=(5, 8)))
    w = rng.normal(size=(5, 8))
    pts = [x] + list(layers.flatten(p).values())
    rep = grad_check(lambda: ops.sum(ops.mul(self_attention(x, p, 2), w)), pts, eps=1e-6)
    assert rep.max_rel_error < 1e-5


def test_feed_forward_gradcheck(rng):
    p = layers.init_feed_forward(rng, 8, 32)
    x = t(rng.normal(size=(4, 8)))
    w = rng.normal(size=(4, 8))
    pts = [x] + list(layers.flatten(p).values())
    rep = grad_check(lambda: ops.sum(ops.mul(feed_forward(x, p), w)), pts, eps=1e-4, order=4)
    assert rep.max_rel_error < 1e-5


# -- tape --------------------------------------------------------------------------


def test_untouched_parameter_gets_exact_zero_gradient():
    a, b = t([1.0, 2.0]), t([3.0])
    with Tape() as tape:
        loss = ops.sum(ops.mul(a, a))
    tape.backward(loss, [a, b])
    np.testing.assert_array_equal(a.grad, [2.0, 4.0])
    np.testing.assert_array_equal(b.grad, [0.0])


def test_reused_tensor_accumulates():
    a = t([3.0])
    with Tape() as tape:
        loss = ops.sum(ops.add(ops.mul(a, a), a))
    tape.backward(loss, [a])
    assert a.grad[0] == 7.0


def test_non_finite_op_raises():
    with pytest.raises(NumericError):
        ops.exp(t([1e4]))


# -- lstm ----------------------------------------------------------------------------


def _zero_lstm(d):
    p = layers.init_lstm(np.random.default_rng(0), d, d)
    for v in p.values():
        v.data = np.zeros_like(v.data)
    return p


def test_lstm_all_zero_gives_zero_state():
    d = 6
    z = Tensor(np.zeros(d))
    h, c = lstm_step(z, z, z, _zero_lstm(d))
    np.testing.assert_array_equal(h.data, 0.0)
    np.testing.assert_array_equal(c.data, 0.0)


def test_lstm_saturated_forget_gate_keeps_cell():
    d = 5
    p = _zero_lstm(d)
    p["b"].data[d : 2 * d] = 20.0
    z = Tensor(np.zeros(d))
    _, c = lstm_step(z, z, Tensor(np.ones(d)), p)
    np.testing.assert_allclose(c.data, 1.0, atol=1e-8)


def test_lstm_matches_textbook_equations(rng):
    d_in, d = 3, 4
    p = layers.init_lstm(rng, d_in, d)
    x, h, c = rng.normal(size=d_in), rng.normal(size=d), rng.normal(size=d)
    z = x @ p["w_x"].data + h @ p["w_h"].data + p["b"].data
    sig = lambda u: 1 / (1 + np.exp(-u))
    i, f, o, g = sig(z[:d]), sig(z[d : 2 * d]), sig(z[2 * d : 3 * d]), np.tanh(z[3 * d :])
    c2 = f * c + i * g
    h2 = o * np.tanh(c2)
    hh, cc = lstm_step(Tensor(x), Tensor(h), Tensor(c), p)
    np.testing.assert_allclose(cc.data, c2, atol=1e-14)
    np.testing.assert_allclose(hh.data, h2, atol=1e-14)


def test_lstm_deterministic(rng):
    p = layers.init_lstm(rng, 4, 4)
    x, h, c = (Tensor(rng.normal(size=4)) for _ in range(3))
    a = lstm_step(x, h, c, p)
    b = lstm_step(x, h, c, p)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()


@pytest.mark.parametrize("shapes", [(3, 4, 4), (4, 3, 4), (4, 4, 3)])
def test_lstm_dimension_mismatch(shapes):
    p = layers.init_lstm(np.random.default_rng(0), 4, 4)
    x, h, c = (Tensor(np.zeros(n)) for n in shapes)
    with pytest.raises(ValueError):
        lstm_step(x, h, c, p)


# -- attention and feed-forward -------------------------------------------------------


def test_attention_single_row_weight_is_one(rng):
    p = layers.init_self_attention(rng, 8)
    _, w = self_attention(Tensor(rng.normal(size=(1, 8))), p, 2, return_weights=True)
    assert np.all(w == 1.0)


@pytest.mark.parametrize("length", range(1, 33))
def test_attention_rows_sum_to_one(length):
    rng = np.random.default_rng(length)
    p = layers.init_self_attention(rng, 16)
    _, w = self_attention(Tensor(3.0 * rng.normal(size=(length, 16))), p, 4, return_weights=True)
    assert np.abs(w.sum(axis=-1) - 1.0).max() <= 1e-6


def test_attention_identical_rows_identical_outputs(rng):
    p = layers.init_self_attention(rng, 8)
    x = rng.normal(size=(4, 8))
    x[2] = x[0]
    y = self_attention(Tensor(x), p, 2).data
    np.testing.assert_array_equal(y[0], y[2])


def test_attention_shape_and_errors(rng):
    p = layers.init_self_attention(rng, 8)
    assert self_attention(Tensor(rng.normal(size=(3, 8))), p, 2).shape == (3, 8)
    with pytest.raises(ValueError):
        self_attention(Tensor(np.zeros((0, 8))), p, 2)
    with pytest.raises(ValueError):
        self_attention(Tensor(np.zeros((3, 8))), p, 3)


def test_feed_forward_zero_inner_weights_is_residual(rng):
    p = layers.init_feed_forward(rng, 64, 256)
    p["w1"].data[:] = 0.0
    x = rng.normal(size=(5, 64))
    y = feed_forward(Tensor(x), p)
    assert y.shape == (5, 64)
    np.testing.assert_array_equal(y.data, x)


def test_feed_forward_width_mismatch(rng):
    p = layers.init_feed_forward(rng, 8)
    with pytest.raises(ValueError):
        feed_forward(Tensor(np.zeros((2, 6))), p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_primitives_are_pure(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 8))
    p = layers.init_self_attention(rng, 8)
    a = self_attention(Tensor(x), p, 2).data
    b = self_attention(Tensor(x.copy()), p, 2).data
    assert a.tobytes() == b.tobytes()
    assert ops.softmax(Tensor(x)).data.tobytes() == ops.softmax(Tensor(x)).data.tobytes()


# -- Adam --------------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params():
    w = t([1.0, -2.0])
    w.grad = np.zeros(2)
    adam_update({"w": w}, AdamState())
    np.testing.assert_array_equal(w.data, [1.0, -2.0])


@pytest.mark.parametrize("g", [0.5, -3.0, 1e3])
def test_adam_first_step_moves_by_lr(g):
    w = t(np.zeros(4))
    w.grad = np.full(4, g)
    st_ = AdamState(lr=1e-3)
    adam_update({"w": w}, st_)
    expected = 1e-3 * abs(g) / (abs(g) + 1e-8)
    np.testing.assert_allclose(np.abs(w.data), expected, rtol=1e-12)
    assert np.all(np.sign(w.data) == -np.sign(g))


def test_adam_matches_reference_over_steps(rng):
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    w = t(rng.normal(size=3))
    ref = w.data.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    state = AdamState(lr=lr)
    for k in range(1, 6):
        g = rng.normal(size=3)
        w.grad = g
        adam_update({"w": w}, state)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        ref = ref - lr * (m / (1 - b1**k)) / (np.sqrt(v / (1 - b2**k)) + eps)
    np.testing.assert_allclose(w.data, ref, rtol=1e-13)
    assert state.step == 5


def test_adam_shape_mismatch():
    w = t([1.0, 2.0])
    w.grad = np.zeros(3)
    with pytest.raises(ValueError):
        adam_update({"w": w}, AdamState())


def test_adam_identical_runs_identical_trajectories(rng):
    g = rng.normal(size=(10, 4))

    def run():
        w = t(np.ones(4))
        s = AdamState()
        for row in g:
            w.grad = row
            adam_update({"w": w}, s)
        return w.data

    assert run().tobytes() == run().tobytes()


def test_softmax_oracle(rng):
    x = rng.normal(size=(4, 5))
    e = np.exp(x - x.max(axis=1, keepdims=True))
    np.testing.assert_allclose(ops.softmax(Tensor(x)).data, e / e.sum(axis=1, keepdims=True), atol=1e-15)


def test_gelu_is_tanh_approximation():
    x = np.linspace(-4, 4, 17)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(ops.gelu(Tensor(x)).data, ref, atol=1e-15)
