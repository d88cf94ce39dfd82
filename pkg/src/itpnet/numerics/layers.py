"""Composite differentiable layers: LSTM cell, self-attention, feed-forward.

Parameters are plain ``dict[str, Tensor]`` mappings. ``init_*`` functions
build them from a NumPy ``Generator``; the forward functions never mutate
them.

Residual blocks use the pre-norm layout ``x + sublayer(layer_norm(x))``.
"""

import math

import numpy as np

from . import ops
from .tape import Tensor


def param(data, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)


def glorot(rng, n_in, n_out):
    return rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out))


def init_linear(rng, n_in, n_out, scale=1.0):
    return {"w": param(scale * glorot(rng, n_in, n_out)), "b": param(np.zeros(n_out))}


def apply_linear(x, p):
    return ops.linear(x, p["w"], p["b"])


# -- LSTM ---------------------------------------------------------------------


def init_lstm(rng, d_in, hidden):
    b = np.zeros(4 * hidden)
    b[hidden : 2 * hidden] = 1.0  # forget-gate bias
    return {
        "w_x": param(glorot(rng, d_in, 4 * hidden)),
        "w_h": param(glorot(rng, hidden, 4 * hidden)),
        "b": param(b),
    }


def lstm_step(x, h, c, p):
    """One LSTM cell update; gate order in the packed weights is ``i, f, o, g``.

    ``x`` is ``(..., d_in)``; ``h`` and ``c`` are ``(..., hidden)``.
    """
    d_in, four_h = p["w_x"].shape
    hidden = four_h // 4
    if x.shape[-1] != d_in:
        raise ValueError(f"lstm_step: input width {x.shape[-1]} != {d_in}")
    if h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise ValueError(f"lstm_step: state width must be {hidden}, got h={h.shape[-1]} c={c.shape[-1]}")
    if h.shape != c.shape or h.shape[:-1] != x.shape[:-1]:
        raise ValueError(f"lstm_step: batch shapes differ: x={x.shape} h={h.shape} c={c.shape}")
    z = ops.add(ops.linear(x, p["w_x"]), ops.linear(h, p["w_h"], p["b"]))
    return ops.lstm_gates(z, c)


# -- attention ----------------------------------------------------------------


def init_layer_norm(d):
    return {"ln_g": param(np.ones(d)), "ln_b": param(np.zeros(d))}


def init_self_attention(rng, d, out_scale=1.0):
    p = init_layer_norm(d)
    p["w_qkv"] = param(glorot(rng, d, 3 * d))
    # No key bias: it shifts every score in a row equally and cancels in softmax.
    p["b_q"] = param(np.zeros(d))
    p["b_v"] = param(np.zeros(d))
    p["w_o"] = param(out_scale * glorot(rng, d, d))
    p["b_o"] = param(np.zeros(d))
    return p


def self_attention(seq, p, heads, return_weights=False):
    """Multi-head scaled dot-product self-attention, pre-norm with residual.

    ``seq`` is ``(len, d)`` or ``(batch, len, d)``. Returns a tensor of the same
    shape and, with ``return_weights``, the ``(batch, heads, len, len)``
    attention weights as a NumPy array.
    """
    squeeze = seq.ndim == 2
    if squeeze:
        seq = ops.reshape(seq, (1,) + seq.shape)
    B, L, d = seq.shape
    if L == 0:
        raise ValueError("self_attention: empty sequence")
    if heads < 1 or d % heads:
        raise ValueError(f"self_attention: width {d} not divisible by {heads} heads")
    if p["w_qkv"].shape[0] != d:
        raise ValueError(f"self_attention: sequence width {d} != parameter width {p['w_qkv'].shape[0]}")
    dh = d // heads

    h = ops.layer_norm(seq, p["ln_g"], p["ln_b"])
    bias = ops.concat([p["b_q"], np.zeros(d), p["b_v"]])
    qkv = ops.linear(h, p["w_qkv"], bias)
    qkv = ops.transpose(ops.reshape(qkv, (B, L, 3, heads, dh)), (2, 0, 3, 1, 4))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    w = ops.softmax(scores)
    ctx = ops.matmul(w, v)
    ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (B, L, d))
    out = ops.add(seq, ops.linear(ctx, p["w_o"], p["b_o"]))
    if squeeze:
        out = ops.reshape(out, (L, d))
    if return_weights:
        return out, w.data
    return out


# -- feed-forward -------------------------------------------------------------


def init_feed_forward(rng, d, inner=None, out_scale=1.0):
    inner = 4 * d if inner is None else inner
    p = init_layer_norm(d)
    p["w1"] = param(glorot(rng, d, inner))
    p["b1"] = param(np.zeros(inner))
    p["w2"] = param(out_scale * glorot(rng, inner, d))
    p["b2"] = param(np.zeros(d))
    return p


def feed_forward(seq, p):
    """Position-wise ``x + W2 gelu(W1 layer_norm(x) + b1) + b2``."""
    if seq.shape[-1] != p["w1"].shape[0]:
        raise ValueError(f"feed_forward: width {seq.shape[-1]} != {p['w1'].shape[0]}")
    h = ops.layer_norm(seq, p["ln_g"], p["ln_b"])
    h = ops.gelu(ops.linear(h, p["w1"], p["b1"]))
    return ops.add(seq, ops.linear(h, p["w2"], p["b2"]))


# -- parameter dict helpers ---------------------------------------------------


def flatten(tree, prefix=""):
    """Flatten nested dicts of tensors into ``{"a/b/c": Tensor}`` (insertion order)."""
    flat = {}
    for key, val in tree.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(flatten(val, name + "/"))
        else:
            flat[name] = val
    return flat


def count(tree):
    return int(sum(t.size for t in flatten(tree).values()))


def stack_steps(steps):
    """Stack ``(B, d)`` tensors along a new time axis 1 -> ``(B, len, d)``."""
    return ops.concat([ops.reshape(s, (s.shape[0], 1, s.shape[1])) for s in steps], axis=1)
