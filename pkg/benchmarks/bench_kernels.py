"""Time the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on shapes taken from the default model (batch 32, d 64,
six modes of twelve steps). The last rows time one full training step and a
500-scene evaluation with each backend bound.
"""

import argparse
import json
import timeit

import numpy as np

from itpnet import kernels
from itpnet.config import TrainConfig
from itpnet.data import build_arrays, generate_dataset
from itpnet.evaluation import evaluate
from itpnet.model import ITPNet
from itpnet.numerics import AdamState
from itpnet.trainer import train_step


def kernel_cases(rng):
    x = rng.normal(size=(32 * 14, 64))
    gamma, beta = rng.normal(size=64), rng.normal(size=64)
    y, xhat, rstd = kernels.get_module("python").layer_norm_forward(x, gamma, beta, 1e-5)
    s = rng.normal(size=(32 * 4 * 14, 14))
    sm = kernels.get_module("python").softmax_forward(s)
    z, c = rng.normal(size=(32, 256)), rng.normal(size=(32, 64))
    lstm = kernels.get_module("python").lstm_forward(z, c)
    v = rng.normal(size=(32 * 16, 64))
    _, vs = kernels.get_module("python").smooth_l1_forward(v)
    g = rng.normal(size=32 * 14 * 256)
    pred, gt = rng.normal(size=(500, 6, 12, 2)), rng.normal(size=(500, 12, 2))
    return {
        "layer_norm_forward": lambda m: m.layer_norm_forward(x, gamma, beta, 1e-5),
        "layer_norm_backward": lambda m: m.layer_norm_backward(y, xhat, rstd, gamma),
        "softmax_forward": lambda m: m.softmax_forward(s),
        "softmax_backward": lambda m: m.softmax_backward(sm, s),
        "lstm_forward": lambda m: m.lstm_forward(z, c),
        "lstm_backward": lambda m: m.lstm_backward(c, c, c, lstm[2], lstm[3]),
        "smooth_l1_forward": lambda m: m.smooth_l1_forward(v),
        "smooth_l1_backward": lambda m: m.smooth_l1_backward(np.ones(len(v)), v, vs),
        "gelu_forward": lambda m: m.gelu_forward(g),
        "gelu_backward": lambda m: m.gelu_backward(g, g),
        "displacement_errors": lambda m: m.displacement_errors(pred, gt),
    }


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the timings here")
    args = ap.parse_args()

    backends = kernels.available_backends()
    rows = []
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        rows.append((name, {b: best_of(lambda: fn(kernels.get_module(b)), args.repeat, 50) for b in backends}))

    cfg = TrainConfig()
    data = build_arrays(generate_dataset(500, 1), cfg.T, cfg.N, cfg.M)
    batch = data.take(np.arange(cfg.batch_size))
    step, ev = {}, {}
    for b in backends:
        kernels.use_backend(b)
        model = ITPNet(cfg)
        params, opt = model.named_parameters(), AdamState(lr=cfg.lr)
        step[b] = best_of(lambda: train_step(model, params, opt, batch), args.repeat, 3)
        ev[b] = best_of(lambda: evaluate(model, data, (1, 6)), args.repeat, 1)
    rows += [("train_step (batch 32)", step), ("evaluate (500 scenes)", ev)]

    head = f"{'kernel':<24}" + "".join(f"{b + ' (us)':>16}" for b in backends)
    if len(backends) == 2:
        head += f"{'speedup':>10}"
    print(head)
    for name, t in rows:
        line = f"{name:<24}" + "".join(f"{t[b] * 1e6:>16.1f}" for b in backends)
        if len(backends) == 2:
            line += f"{t['python'] / t['cython']:>9.2f}x"
        print(line)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({name: t for name, t in rows}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
