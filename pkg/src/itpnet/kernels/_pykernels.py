"""Pure NumPy implementations of the fused kernels.

Every function takes and returns float64 arrays. Row-wise kernels operate on
2-D C-contiguous inputs; callers flatten leading dimensions first.
"""

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2 / pi)
GELU_A = 0.044715


def layer_norm_forward(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd[:, None]
    return xhat * gamma + beta, xhat, rstd


def layer_norm_backward(dy, xhat, rstd, gamma):
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def softmax_forward(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(y, dy):
    return y * (dy - (dy * y).sum(axis=1, keepdims=True))


def lstm_forward(z, c):
    """Gate nonlinearities for an LSTM cell with pre-activations ``z = [i|f|o|g]``."""
    H = c.shape[1]
    gates = np.empty_like(z)
    gates[:, : 3 * H] = 0.5 * (1.0 + np.tanh(0.5 * z[:, : 3 * H]))
    gates[:, 3 * H :] = np.tanh(z[:, 3 * H :])
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    o = gates[:, 2 * H : 3 * H]
    g = gates[:, 3 * H :]
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    return o * tanh_c, c_new, gates, tanh_c


def lstm_backward(dh, dc_new, c, gates, tanh_c):
    H = c.shape[1]
    i = gates[:, :H]
    f = gates[:, H : 2 * H]
    o = gates[:, 2 * H : 3 * H]
    g = gates[:, 3 * H :]
    dct = dc_new + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(gates)
    dz[:, :H] = dct * g * i * (1.0 - i)
    dz[:, H : 2 * H] = dct * c * f * (1.0 - f)
    dz[:, 2 * H : 3 * H] = dh * tanh_c * o * (1.0 - o)
    dz[:, 3 * H :] = dct * i * (1.0 - g * g)
    return dz, dct * f


def smooth_l1_forward(v):
    s = np.abs(v).sum(axis=1)
    out = np.where(s < 1.0, 0.5 * s * s, s - 0.5)
    return out, s


def smooth_l1_backward(dout, v, s):
    slope = np.where(s < 1.0, s, 1.0) * dout
    return np.sign(v) * slope[:, None]


def gelu_forward(x):
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x * x * x)))


def gelu_backward(x, dy):
    t = np.tanh(GELU_C * (x + GELU_A * x * x * x))
    dt = GELU_C * (1.0 + 3.0 * GELU_A * x * x) * (1.0 - t * t)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def displacement_errors(pred, gt):
    """Per-mode average and final L2 errors.

    pred is ``(S, K, M, 2)``, gt is ``(S, M, 2)``; returns two ``(S, K)`` arrays.
    """
    diff = pred - gt[:, None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=3))
    return dist.mean(axis=2), dist[:, :, -1].copy()
