"""Finite-difference check of every differentiable primitive.

Each entry builds a random point from a generator and returns ``(fn, tensors)``
where ``fn`` is a scalar reduction ``sum(R * op(inputs))`` with a fixed random
weight ``R``. Inputs of piecewise ops are kept away from their kinks.
"""

import time

import numpy as np

from . import layers, ops
from .gradcheck import grad_check
from .tape import Tensor

TOL = 1e-5


def _t(rng, *shape, lo=None):
    x = rng.normal(size=shape)
    if lo is not None:  # keep |x| >= lo
        x = np.where(np.abs(x) < lo, np.sign(x + 1e-300) * lo, x)
    return Tensor(x, requires_grad=True)


def _reduce(out, rng):
    w = rng.normal(size=out.shape)
    return lambda o: ops.sum(ops.mul(o, w))


def _unary(op, lo=None, positive=False):
    def build(rng):
        x = _t(rng, 3, 4, lo=lo)
        if positive:
            x.data = np.abs(x.data) + 0.1
        red = _reduce(op(x), rng)
        return (lambda: red(op(x))), [x]

    return build


def _binary(op, b_shape=(3, 4), positive_b=False):
    def build(rng):
        a, b = _t(rng, 3, 4), _t(rng, *b_shape)
        if positive_b:
            b.data = np.abs(b.data) + 0.5
        red = _reduce(op(a, b), rng)
        return (lambda: red(op(a, b))), [a, b]

    return build


def _linear(rng):
    x, w, b = _t(rng, 2, 3, 5), _t(rng, 5, 4), _t(rng, 4)
    red = _reduce(ops.linear(x, w, b), rng)
    return (lambda: red(ops.linear(x, w, b))), [x, w, b]


def _getitem(rng):
    x = _t(rng, 4, 3)
    idx = (np.array([0, 2, 2, 3]), np.array([1, 0, 0, 2]))  # repeated entries accumulate
    red = _reduce(x[idx], rng)
    return (lambda: red(x[idx])), [x]


def _concat(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 1)
    red = _reduce(ops.concat([a, b], axis=1), rng)
    return (lambda: red(ops.concat([a, b], axis=1))), [a, b]


def _layer_norm(rng):
    x, g, b = _t(rng, 3, 6), _t(rng, 6), _t(rng, 6)
    red = _reduce(ops.layer_norm(x, g, b), rng)
    return (lambda: red(ops.layer_norm(x, g, b))), [x, g, b]


def _lstm_step(rng):
    d = 4
    p = layers.init_lstm(rng, d, d)
    for t in layers.flatten(p).values():
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    x, h, c = _t(rng, d), _t(rng, d), _t(rng, d)
    pts = [x, h, c] + list(layers.flatten(p).values())
    wh, wc = rng.normal(size=d), rng.normal(size=d)

    def fn():
        h2, c2 = layers.lstm_step(x, h, c, p)
        return ops.add(ops.sum(ops.mul(h2, wh)), ops.sum(ops.mul(c2, wc)))

    return fn, pts


def _smooth_l1(rng):
    v = _t(rng, 5, 3, lo=1e-2)  # the l1 norm has kinks where components cross zero
    s = np.abs(v.data).sum(axis=1)
    near = np.abs(s - 1.0) < 1e-2
    v.data[near] *= 1.1
    red = _reduce(ops.smooth_l1(v), rng)
    return (lambda: red(ops.smooth_l1(v))), [v]


def _attention(rng):
    d, heads = 8, 2
    p = layers.init_self_attention(rng, d)
    for t in layers.flatten(p).values():
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    x = _t(rng, 5, d)
    red = _reduce(layers.self_attention(x, p, heads), rng)
    return (lambda: red(layers.self_attention(x, p, heads))), [x] + list(layers.flatten(p).values())


def _feed_forward(rng):
    d = 8
    p = layers.init_feed_forward(rng, d, 16)
    for t in layers.flatten(p).values():
        t.data = t.data + 0.1 * rng.normal(size=t.shape)
    x = _t(rng, 5, d)
    red = _reduce(layers.feed_forward(x, p), rng)
    return (lambda: red(layers.feed_forward(x, p))), [x] + list(layers.flatten(p).values())


PRIMITIVES = {
    "add": _binary(ops.add, (4,)),
    "sub": _binary(ops.sub, (3, 1)),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, positive_b=True),
    "matmul": _binary(ops.matmul, (4, 2)),
    "linear": _linear,
    "tanh": _unary(ops.tanh),
    "sigmoid": _unary(ops.sigmoid),
    "relu": _unary(ops.relu, lo=1e-2),
    "gelu": _unary(ops.gelu),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, positive=True),
    "softplus": _unary(ops.softplus),
    "abs": _unary(ops.abs, lo=1e-2),
    "sum": _unary(lambda x: ops.sum(x, axis=0, keepdims=True)),
    "mean": _unary(lambda x: ops.mean(x, axis=1)),
    "reshape": _unary(lambda x: ops.reshape(x, (2, 6))),
    "transpose": _unary(lambda x: ops.transpose(x, (1, 0))),
    "getitem": _getitem,
    "concat": _concat,
    "cumsum": _unary(lambda x: ops.cumsum(x, axis=1)),
    "layer_norm": _layer_norm,
    "softmax": _unary(ops.softmax),
    "lstm_step": _lstm_step,
    "smooth_l1": _smooth_l1,
    "self_attention": _attention,
    "feed_forward": _feed_forward,
}


def check_primitive(name, n_points=100, seed=0, eps=1e-4, order=4):
    """Max relative error of ``name`` over ``n_points`` random points (all entries checked)."""
    build = PRIMITIVES[name]
    worst = 0.0
    for i in range(n_points):
        rng = np.random.default_rng([seed, i])
        fn, pts = build(rng)
        worst = max(worst, grad_check(fn, pts, eps=eps, order=order).max_rel_error)
    return worst


def run_suite(n_points=100, seed=0, names=None):
    """``{name: (max_rel_error, seconds)}`` for each primitive."""
    out = {}
    for name in names or PRIMITIVES:
        t0 = time.perf_counter()
        err = check_primitive(name, n_points, seed)
        out[name] = (err, time.perf_counter() - t0)
    return out


def end_to_end(n_samples=200, seed=0, eps=1e-4, config=None):
    """Check the full training loss of a one-scene batch over sampled parameters.

    Only parameters the loss actually touches are sampled; the remaining ones
    have an exactly zero gradient.
    """
    from ..config import TrainConfig
    from ..data import build_arrays, generate_dataset
    from ..model import ITPNet
    from .tape import Tape

    cfg = config or TrainConfig(seed=seed)
    data = build_arrays(generate_dataset(1, seed + 100), cfg.T, cfg.N, cfg.M)
    model = ITPNet(cfg)
    named = model.named_parameters()
    params = list(named.values())

    def fn():
        terms, _ = model.losses(data.x_obs, data.x_unobs, data.x_gt)
        return terms["l_total"]

    with Tape() as tape:
        loss = fn()
    tape.backward(loss, params)
    touched = [t for t in params if np.any(t.grad != 0)]
    rng = np.random.default_rng(seed)
    return grad_check(fn, touched, eps=eps, n_samples=n_samples, rng=rng, order=4)
