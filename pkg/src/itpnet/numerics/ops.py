"""Differentiable primitives.

Each function computes its value with NumPy (or a fused kernel) and, when a
tape is active and an input requires gradients, records a closure mapping
output gradients to input gradients.
"""

import numpy as np

from .. import kernels
from .tape import NumericError, Tensor, as_tensor, record

_CHECK_FINITE = True


def set_check_finite(flag):
    """Toggle the per-op finiteness check (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(flag)


def _out(data, op):
    if _CHECK_FINITE and not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _rows(x):
    """View ``x`` as C-contiguous 2-D rows over its last axis."""
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


# -- elementwise arithmetic -------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _out(a.data + b.data, "add")
    sa, sb = a.shape, b.shape
    record((a, b), (out,), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _out(a.data - b.data, "sub")
    sa, sb = a.shape, b.shape
    record((a, b), (out,), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _out(a.data * b.data, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    record((a, b), (out,), backward)
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _out(a.data / b.data, "div")

    def backward(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out.data, b.shape)

    record((a, b), (out,), backward)
    return out


def matmul(a, b):
    """Batched ``a @ b`` with NumPy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    out = _out(np.matmul(a.data, b.data), "matmul")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    record((a, b), (out,), backward)
    return out


def linear(x, w, b=None):
    """``x @ w + b`` for ``x`` of shape ``(..., n_in)`` and ``w`` of ``(n_in, n_out)``."""
    x = as_tensor(x)
    y = x.data @ w.data
    if b is not None:
        y = y + b.data
    out = _out(y, "linear")
    lead = x.shape[:-1]

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        gx = (g2 @ w.data.T).reshape(lead + (w.shape[0],))
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gw, gb

    record((x, w, b), (out,), backward)
    return out


# -- elementwise nonlinearities ---------------------------------------------


def tanh(x):
    out = _out(np.tanh(x.data), "tanh")
    record((x,), (out,), lambda g: (g * (1.0 - out.data * out.data),))
    return out


def sigmoid(x):
    out = _out(0.5 * (1.0 + np.tanh(0.5 * x.data)), "sigmoid")
    record((x,), (out,), lambda g: (g * out.data * (1.0 - out.data),))
    return out


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0
    out = _out(np.where(mask, x.data, 0.0), "relu")
    record((x,), (out,), lambda g: (g * mask,))
    return out


def gelu(x):
    """Tanh-approximated GELU."""
    flat = np.ascontiguousarray(x.data.reshape(-1))
    out = _out(kernels.gelu_forward(flat).reshape(x.shape), "gelu")

    def backward(g):
        gf = np.ascontiguousarray(g.reshape(-1))
        return (kernels.gelu_backward(flat, gf).reshape(x.shape),)

    record((x,), (out,), backward)
    return out


def exp(x):
    with np.errstate(over="ignore"):  # overflow is reported by the finiteness check
        out = _out(np.exp(x.data), "exp")
    record((x,), (out,), lambda g: (g * out.data,))
    return out


def log(x, floor=None):
    """Natural log; with ``floor`` the input is clamped from below first."""
    xd = x.data if floor is None else np.maximum(x.data, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _out(np.log(xd), "log")

    def backward(g):
        gx = g / xd
        if floor is not None:
            gx = np.where(x.data >= floor, gx, 0.0)
        return (gx,)

    record((x,), (out,), backward)
    return out


def softplus(x):
    xd = x.data
    out = _out(np.logaddexp(0.0, xd), "softplus")
    record((x,), (out,), lambda g: (g * 0.5 * (1.0 + np.tanh(0.5 * xd)),))
    return out


def abs(x):
    out = _out(np.abs(x.data), "abs")
    record((x,), (out,), lambda g: (g * np.sign(x.data),))
    return out


# -- reductions and shape ---------------------------------------------------


def sum(x, axis=None, keepdims=False):
    out = _out(np.sum(x.data, axis=axis, keepdims=keepdims), "sum")
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    record((x,), (out,), backward)
    return out


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    old = x.shape
    record((x,), (out,), lambda g: (g.reshape(old),))
    return out


def transpose(x, axes):
    out = Tensor(np.transpose(x.data, axes))
    inv = np.argsort(axes)
    record((x,), (out,), lambda g: (np.transpose(g, inv),))
    return out


def getitem(x, idx):
    out = Tensor(x.data[idx])
    fancy = any(isinstance(i, (np.ndarray, list)) for i in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        gx = np.zeros_like(x.data)
        if fancy:
            np.add.at(gx, idx, g)
        else:
            gx[idx] = g
        return (gx,)

    record((x,), (out,), backward)
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    record(tuple(tensors), (out,), backward)
    return out


def cumsum(x, axis):
    out = Tensor(np.cumsum(x.data, axis=axis))

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    record((x,), (out,), backward)
    return out


# -- fused row kernels ------------------------------------------------------


def layer_norm(x, gamma, beta, eps=1e-5):
    shape = x.shape
    y, xhat, rstd = kernels.layer_norm_forward(_rows(x.data), gamma.data, beta.data, eps)
    out = _out(y.reshape(shape), "layer_norm")

    def backward(g):
        dx, dg, db = kernels.layer_norm_backward(_rows(g), xhat, rstd, gamma.data)
        return dx.reshape(shape), dg, db

    record((x, gamma, beta), (out,), backward)
    return out


def softmax(x):
    """Softmax over the last axis."""
    shape = x.shape
    y = kernels.softmax_forward(_rows(x.data))
    out = _out(y.reshape(shape), "softmax")

    def backward(g):
        return (kernels.softmax_backward(y, _rows(g)).reshape(shape),)

    record((x,), (out,), backward)
    return out


def lstm_gates(z, c):
    """Apply LSTM gating to pre-activations ``z = [i|f|o|g]``; returns ``(h, c_new)``."""
    shape = c.shape
    c2 = _rows(c.data)
    h, c_new, gates, tanh_c = kernels.lstm_forward(_rows(z.data), c2)
    h_out = _out(h.reshape(shape), "lstm_gates")
    c_out = _out(c_new.reshape(shape), "lstm_gates")

    def backward(gh, gc):
        dz, dc = kernels.lstm_backward(_rows(gh), _rows(gc), c2, gates, tanh_c)
        return dz.reshape(z.shape), dc.reshape(shape)

    record((z, c), (h_out, c_out), backward)
    return h_out, c_out


def smooth_l1(v):
    """Row-wise smooth L1 over the last axis, on the l1 norm ``s`` of each row.

    ``0.5 * s**2`` if ``s < 1`` else ``s - 0.5``. Output drops the last axis.
    """
    v = as_tensor(v)
    lead = v.shape[:-1]
    v2 = _rows(v.data)
    vals, s = kernels.smooth_l1_forward(v2)
    out = _out(vals.reshape(lead), "smooth_l1")

    def backward(g):
        gv = kernels.smooth_l1_backward(np.ascontiguousarray(g.reshape(-1)), v2, s)
        return (gv.reshape(v.shape),)

    record((v,), (out,), backward)
    return out
