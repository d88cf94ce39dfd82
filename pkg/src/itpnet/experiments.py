"""Synthetic trend experiments: named training runs and the checks over their seed medians."""

import json
import statistics
import time
from dataclasses import replace

from .config import DataConfig, TrainConfig, canonical_json
from .data import build_arrays
from .evaluation import evaluate, synthetic_split
from .trainer import train

# name -> (TrainConfig overrides, observation noise sigma)
RUNS = {
    "baseline": (dict(N=0, nrrformer=False, alpha=0.0, beta=0.0), 0.0),
    "full": (dict(N=4, nrrformer=True), 0.0),
    "concat_rec": (dict(N=4, nrrformer=False, beta=0.0), 0.0),
    "concat_rec_cts": (dict(N=4, nrrformer=False), 0.0),
    "concat_n2": (dict(N=2, nrrformer=False), 0.0),
    "concat_n3": (dict(N=3, nrrformer=False), 0.0),
    "concat_n10": (dict(N=10, nrrformer=False), 0.0),
    "nrr_n3": (dict(N=3, nrrformer=True), 0.0),
    "nrr_n10": (dict(N=10, nrrformer=True), 0.0),
    "baseline_noisy": (dict(N=0, nrrformer=False, alpha=0.0, beta=0.0), 0.1),
    "full_noisy": (dict(N=4, nrrformer=True), 0.1),
}

SEEDS = (0, 1, 2)
METRIC = "minADE"
K = 6


def run_config(name, seed, base=None):
    overrides, _ = RUNS[name]
    base = base or TrainConfig()
    return base.replace(seed=seed, **overrides)


def run_all(names=None, seeds=SEEDS, base=None, data=None, progress=None):
    """Train and evaluate every named run for every seed.

    Returns ``{name: [record per seed]}`` where each record holds the seed,
    config hash, wall time, final training loss and the metrics at K = 1 and 6.
    """
    names = list(names or RUNS)
    data = data or DataConfig()
    splits = {}
    out = {}
    for name in names:
        _, sigma = RUNS[name]
        if sigma not in splits:
            splits[sigma] = synthetic_split(replace(data, sigma=sigma))
        train_trajs, test_trajs = splits[sigma]
        out[name] = []
        for seed in seeds:
            cfg = run_config(name, seed, base)
            tr = build_arrays(train_trajs, cfg.T, cfg.N, cfg.M)
            te = build_arrays(test_trajs, cfg.T, cfg.N, cfg.M)
            t0 = time.perf_counter()
            res = train(cfg, tr)
            report = evaluate(res.model, te, (1, K))
            rec = {
                "seed": seed,
                "config_hash": cfg.hash(),
                "seconds": round(time.perf_counter() - t0, 2),
                "final_loss": res.log[-1]["l_total"],
                "metrics": {str(k): v for k, v in report.metrics.items()},
            }
            out[name].append(rec)
            if progress is not None:
                progress(name, rec)
    return out


def median(results, name, metric=METRIC, k=K):
    return statistics.median(r["metrics"][str(k)][metric] for r in results[name])


def trend_checks(results):
    """Evaluate the synthetic trend criteria on seed medians of minADE@6.

    Each entry maps a check name to ``(passed, detail)``.
    """
    m = {name: median(results, name) for name in results}
    checks = {}
    if {"baseline", "full"} <= set(m):
        ok = m["full"] <= 0.95 * m["baseline"]
        checks["full_vs_baseline"] = (ok, f"full {m['full']:.4f} vs 0.95 x baseline {0.95 * m['baseline']:.4f}")
    if {"baseline", "concat_rec", "concat_rec_cts"} <= set(m):
        ok_rec = m["concat_rec"] < m["baseline"]
        ok_cts = m["concat_rec_cts"] <= 1.02 * m["concat_rec"]
        checks["rec_improves"] = (ok_rec, f"+rec {m['concat_rec']:.4f} vs baseline {m['baseline']:.4f}")
        checks["cts_not_worse"] = (ok_cts, f"+rec+cts {m['concat_rec_cts']:.4f} vs 1.02 x +rec {1.02 * m['concat_rec']:.4f}")
    if {"concat_n2", "concat_n3", "concat_rec_cts", "concat_n10"} <= set(m):
        best = min(m["concat_n2"], m["concat_n3"], m["concat_rec_cts"])
        checks["concat_n10_worse"] = (m["concat_n10"] > best, f"concat N=10 {m['concat_n10']:.4f} vs best N in 2..4 {best:.4f}")
    if {"nrr_n3", "nrr_n10"} <= set(m):
        ok = m["nrr_n10"] <= 1.05 * m["nrr_n3"]
        checks["nrr_n10_holds"] = (ok, f"NRRFormer N=10 {m['nrr_n10']:.4f} vs 1.05 x N=3 {1.05 * m['nrr_n3']:.4f}")
    if {"baseline_noisy", "full_noisy"} <= set(m):
        ok = m["full_noisy"] < m["baseline_noisy"]
        checks["noisy_full_beats_baseline"] = (ok, f"full {m['full_noisy']:.4f} vs baseline {m['baseline_noisy']:.4f} at sigma 0.1")
    return checks


def save(results, path):
    with open(path, "w") as fh:
        fh.write(canonical_json(results) + "\n")


def load(path):
    with open(path) as fh:
        return json.load(fh)
