"""Backward forecasting of unobserved history features and its two losses."""

import numpy as np

from .backbone import FeatureSequence
from .numerics import layers, ops
from .numerics.tape import Tensor


def init_forecaster(rng, d):
    return {"cell": layers.init_lstm(rng, d, d), "head": layers.init_linear(rng, d, d)}


def forecast_tensor(v_obs, psi, N):
    """``(B, T, d)`` observed features -> ``(B, N, d)`` predicted history, oldest first.

    The LSTM starts from a zero state fed with the mean observed feature and
    emits the newest history feature first; each emitted feature is fed back
    as the next input while ``(h, c)`` carries over.
    """
    B, _, d = v_obs.shape
    if N == 0:
        return Tensor(np.zeros((B, 0, d)))
    x = ops.mean(v_obs, axis=1)
    h = Tensor(np.zeros((B, d)))
    c = Tensor(np.zeros((B, d)))
    emitted = []
    for _ in range(N):
        h, c = layers.lstm_step(x, h, c, psi["cell"])
        x = layers.apply_linear(h, psi["head"])
        emitted.append(x)
    return layers.stack_steps(emitted[::-1])


def forecast_unobserved(v_obs, psi, N):
    if N < 0:
        raise ValueError(f"forecast_unobserved: N must be >= 0, got {N}")
    if len(v_obs) < 1:
        raise ValueError("forecast_unobserved: empty observed features")
    feats = forecast_tensor(v_obs.features, psi, N)
    return FeatureSequence(feats, "unobserved-predicted", -N + 1)


def _pair(v_true, v_pred):
    a = v_true.features if isinstance(v_true, FeatureSequence) else v_true
    b = v_pred.features if isinstance(v_pred, FeatureSequence) else v_pred
    if a.shape != b.shape:
        raise ValueError(f"feature sequences differ in shape: {a.shape} vs {b.shape}")
    if a.shape[-2] < 1:
        raise ValueError("feature sequences must have length >= 1")
    return a, b


def loss_rec(v_true, v_pred):
    """Sum over history steps of smooth-L1 feature distance; one value per scene."""
    a, b = _pair(v_true, v_pred)
    return ops.sum(ops.smooth_l1(ops.sub(a, b)), axis=-1)


def loss_cts(v_true, v_pred, margin=1.0):
    """Margin ranking of matched vs mismatched (truth, prediction) pairs within a scene.

    ``sum_i sum_{j != i} max(0, d(v_i, p_i) - d(v_i, p_j) + margin)`` with
    ``d`` the smooth-L1 distance. One value per scene.
    """
    if margin < 0:
        raise ValueError("loss_cts: margin must be >= 0")
    a, b = _pair(v_true, v_pred)
    squeeze = a.ndim == 2
    if squeeze:
        a = ops.reshape(a, (1,) + a.shape)
        b = ops.reshape(b, (1,) + b.shape)
    B, N, d = a.shape
    pos = ops.smooth_l1(ops.sub(a, b))  # (B, N)
    cross = ops.smooth_l1(ops.sub(ops.reshape(a, (B, N, 1, d)), ops.reshape(b, (B, 1, N, d))))  # (B, N, N)
    hinge = ops.relu(ops.add(ops.sub(ops.reshape(pos, (B, N, 1)), cross), margin))
    off_diag = 1.0 - np.eye(N)
    out = ops.sum(ops.mul(hinge, off_diag), axis=(1, 2))
    return ops.reshape(out, ()) if squeeze else out
