"""Training loop, checkpoint conversion, and world-frame prediction."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .data import heading_frame
from .decoder import TERMS
from .model import ITPNet
from .numerics import AdamState, NumericError, Tape, adam_update
from .rng import stream

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step",) + TERMS + ("l_total",)


@dataclass
class TrainResult:
    model: ITPNet
    optimizer: AdamState
    log: list = field(default_factory=list)  # one dict per step

    @property
    def step(self):
        return self.optimizer.step

    def checkpoint(self):
        return to_checkpoint(self.model, self.optimizer)


def check_dataset(cfg, data):
    T, N, M = cfg.T, cfg.N, cfg.M
    if data.x_obs.shape[1:] != (T, 2) or data.x_unobs.shape[1:] != (N, 2) or data.x_gt.shape[1:] != (M, 2):
        raise ValueError(
            f"dataset windows (T={data.x_obs.shape[1]}, N={data.x_unobs.shape[1]}, M={data.x_gt.shape[1]}) "
            f"do not match config (T={T}, N={N}, M={M})"
        )
    if len(data) < cfg.batch_size:
        raise ValueError(f"dataset has {len(data)} scenes, fewer than batch size {cfg.batch_size}")


def batch_schedule(cfg, n_scenes):
    """Yield ``(step, indices)``; each epoch is a fresh permutation, partial batches dropped."""
    per_epoch = n_scenes // cfg.batch_size
    total = cfg.steps if cfg.steps > 0 else cfg.epochs * per_epoch
    step = 0
    epoch = 0
    while step < total:
        perm = stream(cfg.seed, "batch", epoch).permutation(n_scenes)
        for b in range(per_epoch):
            if step >= total:
                return
            step += 1
            yield step, perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
        epoch += 1


def train_step(model, params, opt, batch):
    # overflow surfaces as a NumericError from the per-op finiteness check
    with Tape() as tape, np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            terms, _ = model.losses(batch.x_obs, batch.x_unobs, batch.x_gt)
        except NumericError as exc:
            raise NumericError(f"step {opt.step + 1}: {exc}") from None
    tape.backward(terms["l_total"], params.values())
    adam_update(params, opt)
    return {k: float(v.data) for k, v in terms.items()}


def train(cfg, data, resume=None, log_path=None, checkpoint_path=None, progress=None):
    """Train on normalized :class:`SceneArrays`; deterministic given ``cfg.seed``.

    ``resume`` (a :class:`~itpnet.checkpoint.Checkpoint`) restores parameters,
    optimizer state and the position in the batch schedule. Every
    ``cfg.checkpoint_every`` steps a checkpoint is written to
    ``checkpoint_path`` if given.
    """
    cfg.validate()
    check_dataset(cfg, data)
    if resume is not None:
        model, opt = from_checkpoint(resume, cfg)
    else:
        model = ITPNet(cfg)
        opt = AdamState(lr=cfg.lr)
    params = model.named_parameters()
    rows = []
    writer = None
    fh = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
    try:
        for step, idx in batch_schedule(cfg, len(data)):
            if step <= opt.step:
                continue
            vals = train_step(model, params, opt, data.take(idx))
            row = {"step": step, **vals}
            rows.append(row)
            if writer is not None:
                writer.writerow([step] + [repr(vals[k]) for k in LOG_COLUMNS[1:]])
            if progress is not None:
                progress(row)
            if cfg.checkpoint_every and checkpoint_path and step % cfg.checkpoint_every == 0:
                ckpt.save_checkpoint(to_checkpoint(model, opt), checkpoint_path)
    finally:
        if fh is not None:
            fh.close()
    if rows:
        log.info("trained %d steps, final total loss %.4f", rows[-1]["step"], rows[-1]["l_total"])
    return TrainResult(model, opt, rows)


def to_checkpoint(model, opt):
    meta = {
        "step": opt.step,
        "adam": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps},
        "rng": {"generator": "philox4x64", "seed": model.config.seed, "streams": ["init", "batch"]},
    }
    params = {k: t.data for k, t in model.named_parameters().items()}
    return ckpt.Checkpoint(model.config, params, dict(opt.m), dict(opt.v), meta)


def from_checkpoint(ck, cfg=None):
    """Rebuild ``(model, optimizer)`` from a checkpoint, optionally checking ``cfg``."""
    if cfg is not None:
        ckpt.check_compatible(ck.config, cfg)
    model = ITPNet(cfg if cfg is not None else ck.config)
    named = model.named_parameters()
    missing = sorted(set(named) - set(ck.tensors))
    extra = sorted(set(ck.tensors) - set(named))
    if missing or extra:
        raise ckpt.CheckpointConfigError(f"parameter sets differ: missing={missing[:5]} unexpected={extra[:5]}")
    for name, t in named.items():
        if ck.tensors[name].shape != t.shape:
            raise ckpt.CheckpointConfigError(f"parameter {name}: checkpoint shape {ck.tensors[name].shape} != {t.shape}")
        t.data = ck.tensors[name].copy()
    a = ck.meta.get("adam", {})
    opt = AdamState(
        lr=a.get("lr", model.config.lr),
        beta1=a.get("beta1", 0.9),
        beta2=a.get("beta2", 0.999),
        eps=a.get("eps", 1e-8),
        step=ck.step,
        m={k: v.copy() for k, v in ck.adam_m.items()},
        v={k: v.copy() for k, v in ck.adam_v.items()},
    )
    return model, opt


def write_log(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [repr(r[k]) for k in LOG_COLUMNS[1:]])


def read_log(path):
    with open(path) as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


# -- inference ----------------------------------------------------------------


@dataclass
class WorldPrediction:
    trajectories: np.ndarray  # (K, M, 2) world frame
    scores: np.ndarray  # (K,)


def predict(model, x_obs):
    """World-frame predictions from exactly ``T`` observed locations."""
    if isinstance(model, ckpt.Checkpoint):
        model, _ = from_checkpoint(model)
    x_obs = np.asarray(x_obs, dtype=np.float64)
    T = model.config.T
    if x_obs.shape != (T, 2):
        raise ValueError(f"predict needs exactly {T} observed (x, y) locations, got array of shape {x_obs.shape}")
    if not np.isfinite(x_obs).all():
        raise ValueError("observed locations must be finite")
    fr = heading_frame(x_obs)
    traj, scores = model.predict_arrays(fr.apply(x_obs)[None])
    return WorldPrediction(fr.invert(traj[0]), scores[0])


def predict_batch(model, data, chunk=256):
    """Agent-frame predictions for every scene of ``data``: ``(S, K, M, 2)`` and ``(S, K)``."""
    trajs, scores = [], []
    for s in range(0, len(data), chunk):
        t, p = model.predict_arrays(data.x_obs[s : s + chunk])
        trajs.append(t)
        scores.append(p)
    K, M = model.config.K, model.config.M
    if not trajs:
        return np.zeros((0, K, M, 2)), np.zeros((0, K))
    return np.concatenate(trajs), np.concatenate(scores)
