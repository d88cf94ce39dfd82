"""Displacement metrics, checkpoint evaluation, and the ablation sweep harness."""

import csv
import io
import itertools
import logging
import statistics
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import kernels
from .config import canonical_json
from .data import ScenarioSpec, build_arrays, generate_dataset
from .trainer import from_checkpoint, predict_batch, train

log = logging.getLogger(__name__)

MISS_THRESHOLD = 2.0
METRIC_COLUMNS = ("config_hash", "N", "nrrformer", "l_rec", "l_cts", "T", "K", "seed", "minADE", "minFDE", "MR")


# -- metrics ------------------------------------------------------------------


def _errors(preds, gt):
    """Per-scene, per-mode ADE and FDE for ``(K, M, 2)`` or ``(S, K, M, 2)`` predictions."""
    traj = getattr(preds, "trajectories", preds)
    traj = np.asarray(getattr(traj, "data", traj), dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if traj.ndim == 3:
        traj, gt = traj[None], gt[None]
    if traj.ndim != 4 or gt.ndim != 3 or traj.shape[-1] != 2 or gt.shape[-1] != 2:
        raise ValueError(f"expected predictions (S, K, M, 2) and ground truth (S, M, 2), got {traj.shape} and {gt.shape}")
    if traj.shape[0] != gt.shape[0]:
        raise ValueError(f"{traj.shape[0]} prediction sets for {gt.shape[0]} ground-truth trajectories")
    if traj.shape[2] != gt.shape[1]:
        raise ValueError(f"horizon mismatch: predictions have M={traj.shape[2]}, ground truth M={gt.shape[1]}")
    if traj.shape[1] < 1:
        raise ValueError("need at least one candidate trajectory")
    return kernels.displacement_errors(np.ascontiguousarray(traj), np.ascontiguousarray(gt))


def min_ade(preds, gt):
    """Minimum over candidates of the mean pointwise L2 error, averaged over scenes."""
    ade, _ = _errors(preds, gt)
    return float(ade.min(axis=1).mean())


def min_fde(preds, gt):
    """Minimum over candidates of the final-point L2 error, averaged over scenes."""
    _, fde = _errors(preds, gt)
    return float(fde.min(axis=1).mean())


def miss_rate(preds, gts, threshold=MISS_THRESHOLD):
    """Fraction of scenes whose best final-point error exceeds ``threshold``.

    ``preds`` and ``gts`` are aligned sequences (or stacked arrays) of
    per-scene candidate sets and ground truths.
    """
    if len(preds) != len(gts):
        raise ValueError(f"miss_rate: {len(preds)} prediction sets for {len(gts)} ground truths")
    if len(preds) == 0:
        raise ValueError("miss_rate needs at least one scene")
    traj = np.stack([np.asarray(getattr(p, "data", p), dtype=np.float64) for p in preds])
    _, fde = _errors(traj, np.stack([np.asarray(g, dtype=np.float64) for g in gts]))
    return float(np.mean(fde.min(axis=1) > threshold))


def top_k(traj, scores, K):
    """Keep the ``K`` highest-scoring modes of each scene (ties: lower index first)."""
    traj, scores = np.asarray(traj), np.asarray(scores)
    if not 1 <= K <= scores.shape[1]:
        raise ValueError(f"K={K} outside 1..{scores.shape[1]}")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :K]
    return np.take_along_axis(traj, order[:, :, None, None], axis=1)


@dataclass
class MetricsReport:
    """Metrics keyed by K for one configuration."""

    metrics: dict  # K -> {"minADE", "minFDE", "MR"}
    n_scenes: int
    seeds: list = field(default_factory=list)
    config_hash: str = ""

    def __post_init__(self):
        for K, m in self.metrics.items():
            if m["minADE"] < 0 or m["minFDE"] < 0 or not 0 <= m["MR"] <= 1:
                raise ValueError(f"metrics out of range at K={K}: {m}")

    def to_dict(self):
        return {
            "config_hash": self.config_hash,
            "n_scenes": self.n_scenes,
            "seeds": list(self.seeds),
            "metrics": {str(K): m for K, m in sorted(self.metrics.items())},
        }


def metrics_from_predictions(traj, scores, gt, K_list=(1, 6), threshold=MISS_THRESHOLD):
    out = {}
    for K in K_list:
        sub = top_k(traj, scores, K)
        ade, fde = _errors(sub, gt)
        best_fde = fde.min(axis=1)
        out[int(K)] = {
            "minADE": float(ade.min(axis=1).mean()),
            "minFDE": float(best_fde.mean()),
            "MR": float(np.mean(best_fde > threshold)),
        }
    return out


def evaluate(model, data, K_list=(1, 6), threshold=MISS_THRESHOLD):
    """Metrics of a model or checkpoint on normalized :class:`~itpnet.data.SceneArrays`."""
    if isinstance(model, ckpt.Checkpoint):
        model, _ = from_checkpoint(model)
    cfg = model.config
    if data.x_obs.shape[1:] != (cfg.T, 2) or data.x_gt.shape[1:] != (cfg.M, 2):
        raise ValueError(
            f"dataset windows (T={data.x_obs.shape[1]}, M={data.x_gt.shape[1]}) do not match the model (T={cfg.T}, M={cfg.M})"
        )
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    bad = [K for K in K_list if not 1 <= K <= cfg.K]
    if bad:
        raise ValueError(f"K values {bad} outside 1..{cfg.K}")
    traj, scores = predict_batch(model, data)
    return MetricsReport(metrics_from_predictions(traj, scores, data.x_gt, K_list, threshold), len(data), [cfg.seed], cfg.hash())


# -- synthetic data -------------------------------------------------------------


def synthetic_split(dcfg):
    """Train and held-out trajectory lists for a :class:`~itpnet.config.DataConfig`."""
    dcfg.validate()
    base = ScenarioSpec(
        speed_range=tuple(dcfg.speed_range),
        turn_rate_range=tuple(dcfg.turn_rate_range),
        sigma=dcfg.sigma,
        dt=dcfg.dt,
        length=dcfg.length,
    )
    train_trajs = generate_dataset(dcfg.n_train, dcfg.train_seed, base, dcfg.mixture)
    test_trajs = generate_dataset(dcfg.n_test, dcfg.test_seed, base, dcfg.mixture)
    return train_trajs, test_trajs


# -- ablation sweep -------------------------------------------------------------

LOSS_TOGGLES = {"none": (False, False), "rec": (True, False), "rec+cts": (True, True)}


@dataclass
class Cell:
    N: int
    nrrformer: bool
    losses: str
    T: int
    seed: int
    status: str = "pending"  # ok | skipped | failed
    note: str = ""
    config_hash: str = ""
    report: MetricsReport = None

    @property
    def l_rec(self):
        return LOSS_TOGGLES[self.losses][0]

    @property
    def l_cts(self):
        return LOSS_TOGGLES[self.losses][1]


def cell_config(base, cell):
    rec, cts = LOSS_TOGGLES[cell.losses]
    return base.replace(
        N=cell.N,
        T=cell.T,
        nrrformer=cell.nrrformer,
        alpha=base.alpha if rec and cell.N > 0 else 0.0,
        beta=base.beta if cts and cell.N > 0 else 0.0,
        seed=cell.seed,
    )


def sweep_cells(sweep, base):
    """Every grid cell in a fixed order; undefined combinations come back as skipped."""
    sweep.validate()
    cells = []
    for N, nrr, losses, T, seed in itertools.product(sweep.N_values, sweep.nrrformer, sweep.losses, sweep.T_values, sweep.seeds):
        c = Cell(int(N), bool(nrr), losses, int(T), int(seed))
        if nrr and N == 0:
            c.status, c.note = "skipped", "NRRFormer undefined for N=0"
        elif nrr and base.C >= N:
            c.status, c.note = "skipped", f"query length C={base.C} not below N={N}"
        cells.append(c)
    return cells


@dataclass
class SweepResult:
    cells: list
    metrics_csv: str
    table_csv: str
    failures: int
    trend: dict = None  # trend-check outcome when requested

    @property
    def ok(self):
        return self.failures == 0 and (self.trend is None or self.trend["passed"])


def ablation_sweep(sweep, base, train_trajs, test_trajs, K_list=None, out_dir=None, trend_tol=None, progress=None, runner=None):
    """Train and evaluate every cell of ``sweep`` on the given trajectories.

    ``base`` supplies the shared configuration; each cell overrides N, T, the
    NRRFormer flag, the loss toggles and the seed. Cell failures are recorded
    and the sweep continues. With ``out_dir``, writes ``metrics.csv``,
    ``table.csv``, one SVG per metric and ``sweep.json``. ``trend_tol``
    enables the N=10 vs N=3 check with the NRRFormer on.
    """
    K_list = tuple(sweep.K_values if K_list is None else K_list)
    runner = runner or _run_cell
    cells = sweep_cells(sweep, base)
    arrays = {}
    for cell in cells:
        if cell.status == "skipped":
            log.info("skip N=%d nrrformer=%s: %s", cell.N, cell.nrrformer, cell.note)
            continue
        try:
            cfg = cell_config(base, cell)
            cell.config_hash = cfg.hash()
            key = (cell.T, cell.N, cfg.M)
            if key not in arrays:
                arrays[key] = (build_arrays(train_trajs, cell.T, cell.N, cfg.M), build_arrays(test_trajs, cell.T, cell.N, cfg.M))
            cell.report = runner(cfg, arrays[key][0], arrays[key][1], K_list)
            cell.status = "ok"
        except Exception as exc:  # noqa: BLE001 - any failure is recorded per cell
            cell.status, cell.note = "failed", f"{type(exc).__name__}: {exc}"
            log.warning("cell N=%d nrrformer=%s seed=%d failed\n%s", cell.N, cell.nrrformer, cell.seed, traceback.format_exc())
        if progress is not None:
            progress(cell)
    metrics_csv = format_metrics_csv(cells, K_list)
    table_csv = format_table_csv(cells, K_list)
    failures = sum(c.status == "failed" for c in cells)
    trend = check_trend(cells, max(K_list), trend_tol) if trend_tol is not None else None
    result = SweepResult(cells, metrics_csv, table_csv, failures, trend)
    if out_dir is not None:
        write_sweep(result, out_dir, base, sweep, K_list)
    return result


def _run_cell(cfg, train_data, test_data, K_list):
    res = train(cfg, train_data)
    return evaluate(res.model, test_data, K_list)


def _fmt(x):
    return f"{x:.6f}"


def format_metrics_csv(cells, K_list):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for c in cells:
        if c.status != "ok":
            continue
        for K in K_list:
            m = c.report.metrics[K]
            w.writerow([c.config_hash, c.N, int(c.nrrformer), int(c.l_rec), int(c.l_cts), c.T, K, c.seed,
                        _fmt(m["minADE"]), _fmt(m["minFDE"]), _fmt(m["MR"])])
    return buf.getvalue()


def seed_medians(cells, K, metric="minADE"):
    """``{(N, nrrformer, losses, T): median over seeds}`` of successful cells."""
    groups = {}
    for c in cells:
        if c.status == "ok":
            groups.setdefault((c.N, c.nrrformer, c.losses, c.T), []).append(c.report.metrics[K][metric])
    return {k: statistics.median(v) for k, v in groups.items()}


def format_table_csv(cells, K_list):
    """One row per (N, losses, T); paired without/with-NRRFormer columns of seed medians."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["N", "losses", "T"]
    for K in K_list:
        for metric in ("minADE", "minFDE", "MR"):
            header += [f"{metric}@{K}_without", f"{metric}@{K}_with"]
    w.writerow(header)
    med = {(K, m): seed_medians(cells, K, m) for K in K_list for m in ("minADE", "minFDE", "MR")}
    rows = sorted({(c.N, c.losses, c.T) for c in cells})
    for N, losses, T in rows:
        row = [N, losses, T]
        for K in K_list:
            for m in ("minADE", "minFDE", "MR"):
                for nrr in (False, True):
                    v = med[(K, m)].get((N, nrr, losses, T))
                    row.append("" if v is None else _fmt(v))
        w.writerow(row)
    return buf.getvalue()


def check_trend(cells, K, tol, long_n=10, short_n=3):
    """With the NRRFormer on: median minADE@K at ``long_n`` <= median at ``short_n`` * (1 + tol)."""
    med = seed_medians(cells, K)
    out = {"K": K, "tol": tol, "passed": True, "checks": []}
    for (N, nrr, losses, T), v in sorted(med.items()):
        if not nrr or N != long_n:
            continue
        ref = med.get((short_n, True, losses, T))
        if ref is None:
            continue
        ok = v <= ref * (1 + tol)
        out["checks"].append({"losses": losses, "T": T, "long": v, "short": ref, "passed": bool(ok)})
        out["passed"] &= bool(ok)
    if not out["checks"]:
        out["passed"] = False
        out["note"] = f"no cells with the NRRFormer at both N={short_n} and N={long_n}"
    return out


def write_sweep(result, out_dir, base, sweep, K_list):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv)
    (out / "table.csv").write_text(result.table_csv)
    summary = {
        "base_config": base.to_dict(),
        "sweep": sweep.to_dict(),
        "cells": [
            {"N": c.N, "nrrformer": c.nrrformer, "losses": c.losses, "T": c.T, "seed": c.seed,
             "status": c.status, "note": c.note, "config_hash": c.config_hash}
            for c in result.cells
        ],
        "failures": result.failures,
        "trend": result.trend,
    }
    (out / "sweep.json").write_text(canonical_json(summary) + "\n")
    plot_metrics(result.cells, K_list, out)


def plot_metrics(cells, K_list, out_dir):
    """Deterministic SVG line plots of each metric against N."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    with matplotlib.rc_context({"svg.hashsalt": "itpnet", "svg.fonttype": "none"}):
        for metric in ("minADE", "minFDE", "MR"):
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for K in K_list:
                med = seed_medians(cells, K, metric)
                series = sorted({(nrr, losses, T) for (_, nrr, losses, T) in med})
                for nrr, losses, T in series:
                    pts = sorted((N, v) for (N, n2, l2, T2), v in med.items() if (n2, l2, T2) == (nrr, losses, T))
                    label = f"K={K} {'NRRFormer' if nrr else 'concat'} {losses} T={T}"
                    ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
            ax.set_xlabel("N (unobserved steps)")
            ax.set_ylabel(metric)
            if ax.lines:
                ax.legend(fontsize=6)
            fig.tight_layout()
            path = Path(out_dir) / f"{metric}_vs_N.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            paths.append(path)
    return paths
