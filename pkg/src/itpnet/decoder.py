"""Multimodal decoder, winner-takes-all selection, and the training losses.

Two loss families are supported:

``laplace-ce``
    Laplace negative log-likelihood of the selected mode plus cross-entropy on
    the mode probabilities.
``smoothl1-margin``
    Per-step smooth L1 of the selected mode plus a max-margin ranking of mode
    scores.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import layers, ops
from .numerics.tape import NumericError, Tensor, numeric_context

FAMILIES = ("laplace-ce", "smoothl1-margin")
SCALE_FLOOR = 1e-3
PROB_FLOOR = 1e-12
_SOFTPLUS_INV_1 = 0.5413248546129181  # softplus^-1(1)


@dataclass
class PredictionSet:
    trajectories: Tensor  # (B, K, M, 2)
    scores: Tensor  # (B, K), softmax probabilities
    scales: Tensor = None  # (B, K, M, 2) Laplace scales, laplace-ce only

    @property
    def K(self):
        return self.trajectories.shape[1]


@dataclass
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.1
    epsilon: float = 0.2
    family: str = "laplace-ce"

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.epsilon < 0:
            raise ValueError("loss weights and margin must be >= 0")
        if self.family not in FAMILIES:
            raise ValueError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")


def init_decoder(rng, in_dim, hidden, K, M, family="laplace-ce"):
    w = {
        "hidden": layers.init_linear(rng, in_dim, hidden),
        "traj": layers.init_linear(rng, hidden, K * M * 2),
        "score": layers.init_linear(rng, hidden, K),
    }
    if family == "laplace-ce":
        w["scale"] = layers.init_linear(rng, hidden, K * M * 2)
        w["scale"]["b"].data[:] = _SOFTPLUS_INV_1
    return w


def decode(features, omega, K, M, traj_scale=1.0):
    """``(B, R, d)`` or ``(R, d)`` features -> :class:`PredictionSet` in the agent frame.

    The trajectory head emits per-step offsets; positions are their running
    sum times ``traj_scale`` (meters per unit).
    """
    if features.ndim == 2:
        features = ops.reshape(features, (1,) + features.shape)
    B = features.shape[0]
    flat_dim = features.shape[1] * features.shape[2]
    if flat_dim != omega["hidden"]["w"].shape[0]:
        raise ValueError(f"decode: flattened input width {flat_dim} != configured {omega['hidden']['w'].shape[0]}")
    if omega["traj"]["w"].shape[1] != K * M * 2 or omega["score"]["w"].shape[1] != K:
        raise ValueError(f"decode: decoder parameters do not match K={K}, M={M}")
    h = ops.gelu(layers.apply_linear(ops.reshape(features, (B, flat_dim)), omega["hidden"]))
    steps = ops.reshape(layers.apply_linear(h, omega["traj"]), (B, K, M, 2))
    traj = ops.mul(ops.cumsum(steps, axis=2), traj_scale)
    scores = ops.softmax(layers.apply_linear(h, omega["score"]))
    scales = None
    if "scale" in omega:
        raw = ops.reshape(layers.apply_linear(h, omega["scale"]), (B, K, M, 2))
        scales = ops.add(ops.softplus(raw), SCALE_FLOOR)
    return PredictionSet(traj, scores, scales)


def _arr(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def mode_errors(traj, gt):
    """Average and final displacement error of every mode: two ``(B, K)`` arrays."""
    traj, gt = _arr(traj), _arr(gt)
    if traj.ndim == 3:
        traj, gt = traj[None], gt[None]
    if traj.shape[2:] != gt.shape[1:]:
        raise ValueError(f"horizon mismatch: predictions {traj.shape} vs ground truth {gt.shape}")
    return kernels.displacement_errors(np.ascontiguousarray(traj), np.ascontiguousarray(gt))


def wta_select(traj, gt, mode="mean"):
    """Index of the mode closest to ``gt`` per scene; lowest index wins ties.

    ``mode="mean"`` ranks by mean pointwise L2 distance, ``"endpoint"`` by the
    final-point distance.
    """
    ade, fde = mode_errors(traj, gt)
    k = np.argmin(ade if mode == "mean" else fde, axis=1)
    return k if _arr(traj).ndim == 4 else int(k[0])


def _select(x, k):
    """Gather mode ``k[b]`` of each scene from a ``(B, K, ...)`` tensor."""
    k = np.atleast_1d(k)
    return x[np.arange(len(k)), k]


def loss_reg_laplace(traj_sel, gt, scales):
    """Laplace NLL summed over steps and coordinates: ``log(2b) + |x - mu| / b``."""
    if np.any(_arr(scales) <= 0):
        raise ValueError("loss_reg_laplace: scales must be positive")
    if traj_sel.shape != np.shape(_arr(gt)) or traj_sel.shape != scales.shape:
        raise ValueError("loss_reg_laplace: shape mismatch")
    nll = ops.add(ops.log(ops.mul(scales, 2.0)), ops.div(ops.abs(ops.sub(traj_sel, _arr(gt))), scales))
    return ops.sum(nll, axis=(-2, -1))


def loss_cls_ce(scores, k):
    """``-log p[k]`` with probabilities floored at 1e-12; one value per scene."""
    if scores.ndim == 1:
        return ops.mul(ops.log(scores[int(k)], floor=PROB_FLOOR), -1.0)
    return ops.mul(ops.log(_select(scores, k), floor=PROB_FLOOR), -1.0)


def loss_reg_smooth_l1(traj_sel, gt):
    """Sum over steps of smooth L1 on each step's 2-D residual."""
    if traj_sel.shape != np.shape(_arr(gt)):
        raise ValueError(f"loss_reg_smooth_l1: shape mismatch {traj_sel.shape} vs {np.shape(_arr(gt))}")
    return ops.sum(ops.smooth_l1(ops.sub(traj_sel, _arr(gt))), axis=-1)


def loss_cls_margin(scores, k, epsilon):
    """Mean hinge ``max(0, p[j] + eps - p[k])`` over the other modes ``j``.

    Pushes the selected mode's score above every other one by ``epsilon``.
    Defined as 0 when there is a single mode.
    """
    squeeze = scores.ndim == 1
    if squeeze:
        scores = ops.reshape(scores, (1,) + scores.shape)
    B, K = scores.shape
    k = np.atleast_1d(k)
    if K == 1:
        out = Tensor(np.zeros(B))
    else:
        sel = ops.reshape(_select(scores, k), (B, 1))
        hinge = ops.relu(ops.add(ops.sub(scores, sel), epsilon))
        mask = np.ones((B, K))
        mask[np.arange(B), k] = 0.0
        out = ops.mul(ops.sum(ops.mul(hinge, mask), axis=1), 1.0 / (K - 1))
    return ops.reshape(out, ()) if squeeze else out


TERMS = ("l_reg", "l_cls", "l_rec", "l_cts")


def total_loss(reg, cls, rec, cts, weights):
    """``reg + cls + alpha * rec + beta * cts``; refuses non-finite components."""
    for name, t in zip(TERMS, (reg, cls, rec, cts)):
        if not np.all(np.isfinite(_arr(t))):
            raise NumericError(f"non-finite loss component {name}")
    out = ops.add(reg, cls)
    if weights.alpha:
        out = ops.add(out, ops.mul(rec, weights.alpha))
    if weights.beta:
        out = ops.add(out, ops.mul(cts, weights.beta))
    return out


def head_losses(preds, gt, weights, wta="mean"):
    """Regression and classification losses (per scene) and the selected modes."""
    k = wta_select(preds.trajectories, gt, mode=wta)
    k = np.atleast_1d(k)
    traj_sel = _select(preds.trajectories, k)
    laplace = weights.family == "laplace-ce"
    with numeric_context("loss term l_reg"):
        reg = loss_reg_laplace(traj_sel, gt, _select(preds.scales, k)) if laplace else loss_reg_smooth_l1(traj_sel, gt)
    with numeric_context("loss term l_cls"):
        cls = loss_cls_ce(preds.scores, k) if laplace else loss_cls_margin(preds.scores, k, weights.epsilon)
    return reg, cls, k
