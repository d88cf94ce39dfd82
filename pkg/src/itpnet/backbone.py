"""Reference trajectory encoder.

Any callable with the signature of :func:`encode` (locations in, one causal
``d``-vector per location out) can stand in for it. The reference version
embeds per-step displacements with a linear layer and GELU, then mixes them
with a single causal LSTM layer. The first location of a sequence has no
predecessor and gets a zero displacement.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import layers, ops
from .numerics.tape import Tensor

ROLES = ("observed", "unobserved-truth", "unobserved-predicted")


@dataclass
class FeatureSequence:
    features: Tensor  # (B, len, d)
    role: str
    start: int  # time index of the first row; observed points are 1..T, history is <= 0

    def __len__(self):
        return self.features.shape[1]

    @property
    def width(self):
        return self.features.shape[-1]


def init_backbone(rng, d):
    return {"embed": layers.init_linear(rng, 2, d), "mix": layers.init_lstm(rng, d, d)}


def displacements(x):
    """``(B, L, 2)`` locations -> per-step motion vectors, first step zero."""
    disp = np.zeros_like(x)
    disp[:, 1:] = x[:, 1:] - x[:, :-1]
    return disp


def encode_tensor(x, phi, disp_scale=1.0):
    """Batched core of :func:`encode`: ``(B, L, 2)`` array -> ``(B, L, d)`` tensor."""
    B, L, _ = x.shape
    if L == 0:
        raise ValueError("encode: empty location sequence")
    d = phi["embed"]["w"].shape[1]
    e = ops.gelu(layers.apply_linear(Tensor(displacements(x) / disp_scale), phi["embed"]))
    mix = phi["mix"]
    xw = ops.linear(e, mix["w_x"])  # input projection for all steps at once
    h = Tensor(np.zeros((B, d)))
    c = Tensor(np.zeros((B, d)))
    steps = []
    for i in range(L):
        z = ops.add(xw[:, i], ops.linear(h, mix["w_h"], mix["b"]))
        h, c = ops.lstm_gates(z, c)
        steps.append(h)
    return layers.stack_steps(steps)


def encode(x, phi, disp_scale=1.0, role="observed", start=1):
    """Encode locations ``(L, 2)`` or ``(B, L, 2)`` into a :class:`FeatureSequence`.

    Row ``i`` depends only on locations ``0..i``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != 2:
        raise ValueError(f"encode: expected (..., L, 2) locations, got shape {x.shape}")
    if x.shape[1] == 0:
        raise ValueError("encode: empty location sequence")
    return FeatureSequence(encode_tensor(x, phi, disp_scale), role, start)
