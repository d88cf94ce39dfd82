"""Stacked attention blocks that compress predicted history features into a query.

Each block attends over ``[query ; history]``, keeps both halves, then attends
over ``[query ; observed]`` and keeps only the query rows, then applies a
feed-forward layer to the query. Observed-feature outputs of the second stage
are dropped, so every block re-reads the original observed features.
"""

import numpy as np

from .numerics import layers, ops
from .numerics.tape import Tensor


class ConfigError(ValueError):
    pass


def check_compression(C, N):
    if C < 1:
        raise ConfigError(f"query length C must be >= 1, got {C}")
    if N > 0 and C >= N:
        raise ConfigError(f"query length C={C} must be smaller than history length N={N}")


def init_nrrformer(rng, d, C, L, inner=None, q0_std=0.02):
    if L < 1:
        raise ConfigError(f"NRRFormer needs at least one block, got L={L}")
    blocks = {}
    for l in range(L):
        blocks[str(l)] = {
            "att_unobs": layers.init_self_attention(rng, d),
            "att_obs": layers.init_self_attention(rng, d),
            "ffn": layers.init_feed_forward(rng, d, inner),
        }
    return {"q0": layers.param(rng.normal(0.0, q0_std, size=(C, d))), "blocks": blocks}


def _batched(x):
    return ops.reshape(x, (1,) + x.shape) if x.ndim == 2 else x


def nrr_block(q, v_unobs, v_obs, theta, heads, enforce_compression=True, return_stage2=False):
    """One block: ``(q, v_unobs, v_obs) -> (q', v_unobs')``.

    Shapes are ``(C, d)``, ``(N, d)``, ``(T, d)`` or batched with a leading axis.
    ``return_stage2`` additionally returns the full ``(C+T)``-row output of the
    second attention stage (only its first ``C`` rows are used).
    """
    squeeze = q.ndim == 2
    q, v_unobs, v_obs = _batched(q), _batched(v_unobs), _batched(v_obs)
    C, N, d = q.shape[1], v_unobs.shape[1], q.shape[2]
    if enforce_compression:
        check_compression(C, N)
    if v_unobs.shape[2] != d or v_obs.shape[2] != d:
        raise ValueError(f"nrr_block: widths differ q={d} unobs={v_unobs.shape[2]} obs={v_obs.shape[2]}")

    s1 = layers.self_attention(ops.concat([q, v_unobs], axis=1), theta["att_unobs"], heads)
    q_unobs = s1[:, :C]
    v_next = s1[:, C:]
    s2 = layers.self_attention(ops.concat([q_unobs, v_obs], axis=1), theta["att_obs"], heads)
    q_next = layers.feed_forward(s2[:, :C], theta["ffn"])

    if squeeze:
        q_next = ops.reshape(q_next, q_next.shape[1:])
        v_next = ops.reshape(v_next, v_next.shape[1:])
        s2 = ops.reshape(s2, s2.shape[1:])
    if return_stage2:
        return q_next, v_next, s2
    return q_next, v_next


def nrrformer_forward(q0, v_unobs, v_obs, theta, heads, enforce_compression=True):
    """Run all blocks starting from the learned query ``q0``; returns ``(B, C, d)``."""
    v_unobs, v_obs = _batched(v_unobs), _batched(v_obs)
    B = v_unobs.shape[0]
    q = ops.add(Tensor(np.zeros((B,) + q0.shape)), q0)
    for l in range(len(theta["blocks"])):
        q, v_unobs = nrr_block(q, v_unobs, v_obs, theta["blocks"][str(l)], heads, enforce_compression)
    return q


def concat_fallback(v_unobs, v_obs):
    """History features followed by observed features along the time axis."""
    if v_unobs.shape[-1] != v_obs.shape[-1]:
        raise ValueError(f"concat_fallback: widths differ {v_unobs.shape[-1]} vs {v_obs.shape[-1]}")
    if v_unobs.shape[-2] == 0:
        return v_obs
    return ops.concat([v_unobs, v_obs], axis=-2)


def n_params(theta):
    return layers.count(theta)
