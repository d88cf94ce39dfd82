"""The assembled predictor: encoder -> backward forecaster -> NRRFormer or concat -> decoder."""

from dataclasses import dataclass

import numpy as np

from . import backbone, decoder, forecaster, nrrformer
from .numerics import layers, ops
from .numerics.tape import Tensor, numeric_context
from .rng import stream


@dataclass
class ForwardResult:
    preds: decoder.PredictionSet
    v_obs: object  # (B, T, d)
    v_unobs_pred: object  # (B, N, d)
    v_unobs_true: object = None  # (B, N, d), only when history is given


class ITPNet:
    """Parameters plus the forward pass for one :class:`~itpnet.config.TrainConfig`."""

    def __init__(self, config, params=None):
        self.config = config.validate()
        self.params = self.init_params(config) if params is None else params

    @staticmethod
    def init_params(cfg):
        rng = stream(cfg.seed, "init")
        rows = cfg.C if cfg.nrrformer else cfg.N + cfg.T
        p = {
            "backbone": backbone.init_backbone(rng, cfg.d),
            "forecaster": forecaster.init_forecaster(rng, cfg.d),
        }
        if cfg.nrrformer:
            p["nrrformer"] = nrrformer.init_nrrformer(rng, cfg.d, cfg.C, cfg.L, cfg.ffn_inner)
        p["decoder"] = decoder.init_decoder(rng, rows * cfg.d, cfg.decoder_hidden, cfg.K, cfg.M, cfg.family)
        return p

    def named_parameters(self):
        """Flat ``{"group/.../name": Tensor}`` in a fixed order."""
        return layers.flatten(self.params)

    def groups(self):
        """Parameter names per pathway: backbone, forecaster, nrrformer blocks, query, decoder."""
        out = {}
        for name in self.named_parameters():
            g = name.split("/")[0]
            if name == "nrrformer/q0":
                g = "query"
            out.setdefault(g, []).append(name)
        return out

    def forward(self, x_obs, x_unobs=None):
        """Batched forward on agent-frame arrays ``x_obs (B, T, 2)`` and optional ``x_unobs (B, N, 2)``."""
        cfg, p = self.config, self.params
        x_obs = np.asarray(x_obs, dtype=np.float64)
        if x_obs.ndim != 3 or x_obs.shape[1] != cfg.T:
            raise ValueError(f"expected observed locations of shape (B, {cfg.T}, 2), got {x_obs.shape}")
        v_obs = backbone.encode_tensor(x_obs, p["backbone"], cfg.disp_scale)
        v_hat = forecaster.forecast_tensor(v_obs, p["forecaster"], cfg.N)
        v_true = None
        if x_unobs is not None and cfg.N > 0:
            v_true = backbone.encode_tensor(np.asarray(x_unobs, dtype=np.float64), p["backbone"], cfg.disp_scale)
            if cfg.stop_gradient_target:
                v_true = Tensor(v_true.data.copy())
        if cfg.nrrformer:
            feats = nrrformer.nrrformer_forward(p["nrrformer"]["q0"], v_hat, v_obs, p["nrrformer"], cfg.heads)
        else:
            feats = nrrformer.concat_fallback(v_hat, v_obs)
        preds = decoder.decode(feats, p["decoder"], cfg.K, cfg.M, cfg.traj_scale)
        return ForwardResult(preds, v_obs, v_hat, v_true)

    def losses(self, x_obs, x_unobs, x_gt):
        """Batch-mean loss components and the total, as tensors."""
        cfg = self.config
        with numeric_context("forward pass"):
            out = self.forward(x_obs, x_unobs)
        reg, cls, k = decoder.head_losses(out.preds, x_gt, cfg.weights, cfg.wta)
        B = len(x_obs)
        if out.v_unobs_true is not None:
            with numeric_context("loss term l_rec"):
                rec = forecaster.loss_rec(out.v_unobs_true, out.v_unobs_pred)
            with numeric_context("loss term l_cts"):
                cts = forecaster.loss_cts(out.v_unobs_true, out.v_unobs_pred, cfg.margin)
        else:
            rec = cts = Tensor(np.zeros(B))
        terms = {}
        for name, per_scene in zip(decoder.TERMS, (reg, cls, rec, cts)):
            with numeric_context(f"loss term {name}"):
                terms[name] = ops.mean(per_scene)
        terms["l_total"] = decoder.total_loss(terms["l_reg"], terms["l_cls"], terms["l_rec"], terms["l_cts"], cfg.weights)
        return terms, out

    def predict_arrays(self, x_obs):
        """Agent-frame predictions as NumPy arrays ``(traj (B, K, M, 2), scores (B, K))``."""
        out = self.forward(x_obs)
        return out.preds.trajectories.data, out.preds.scores.data
