"""Command-line entry point: ``itpnet <subcommand> [options]``.

Subcommands: gen-data, train, eval, ablate, gradcheck, predict.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure,
4 acceptance-check failure (gradient check or sweep trend check).
"""

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_ACCEPT = 0, 1, 2, 3, 4

log = logging.getLogger("itpnet")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, out_help="output directory"):
    p.add_argument("--config", help="JSON config file (sections: profile, train, data, sweep)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config file)")
    p.add_argument("--out", help=out_help)
    p.add_argument("--threads", type=int, help="cap on BLAS threads (default: $ITPNET_THREADS, else unlimited)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override any config field, VALUE parsed as JSON (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    ap = _Parser(prog="itpnet", description="Instantaneous trajectory prediction laboratory.")
    sub = ap.add_subparsers(dest="cmd", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a synthetic scene file")
    _common(p, "output scene file (.jsonl or .csv)")
    p.add_argument("--spec", default="default", help="'default' (configured mixture) or a single scenario kind")
    p.add_argument("--scenes", type=int, help="number of scenes (default: data.n_train)")
    p.add_argument("--sigma", type=float, help="observation noise std in meters")

    p = sub.add_parser("train", help="train a model")
    _common(p)
    p.add_argument("--data", help="scene file; default: synthetic training split from the config")
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="scene file; default: synthetic held-out split from the config")
    p.add_argument("--k", type=int, action="append", help="K values (default: 1 and the model's K)")

    p = sub.add_parser("ablate", help="run an ablation sweep")
    _common(p)
    p.add_argument("--trend-tol", type=float, help="check NRRFormer minADE(N=10) <= minADE(N=3) * (1 + tol)")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    _common(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--all", action="store_true", help="every primitive plus the end-to-end loss")
    g.add_argument("--op", action="append", help="one primitive (repeatable)")
    p.add_argument("--points", type=int, default=100, help="random points per primitive")

    p = sub.add_parser("predict", help="predict from observed points")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--points", required=True, help='observed points "x,y;x,y"')
    return ap


# -- configuration ---------------------------------------------------------------


def load_settings(args):
    """Defaults < config file < flags."""
    from .config import parse_config

    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{args.config}: config file must hold a JSON object")
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, field = key.partition(".")
        if not sep or not dot or section not in ("train", "data", "sweep"):
            raise UsageError(f"--set expects SECTION.KEY=VALUE with SECTION in train/data/sweep, got {item!r}")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        raw.setdefault(section, {})[field] = parsed
    train = raw.setdefault("train", {})
    if args.seed is not None:
        train["seed"] = args.seed
    for flag in ("steps", "epochs"):
        v = getattr(args, flag, None)
        if v is not None:
            train[flag] = v
    settings = parse_config(raw)
    if args.seed is not None:
        d = settings["data"]
        settings["data"] = replace(d, train_seed=args.seed, test_seed=args.seed + 1)
    return settings


def effective(settings):
    return {
        "profile": settings["profile"],
        "train": settings["train"].to_dict(),
        "data": settings["data"].to_dict(),
        "sweep": settings["sweep"].to_dict(),
    }


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    from .config import canonical_json

    Path(path).write_text(canonical_json(obj) + "\n")


@contextlib.contextmanager
def thread_limit(n):
    if n is None:
        env = os.environ.get("ITPNET_THREADS")
        if env:
            try:
                n = int(env)
            except ValueError:
                raise UsageError(f"ITPNET_THREADS must be an integer, got {env!r}") from None
    if n is None:
        yield
        return
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# -- data helpers -----------------------------------------------------------------


def _trajectories(args, settings, split):
    from .data import load_scenes
    from .evaluation import synthetic_split

    if getattr(args, "data", None):
        return load_scenes(args.data, dt=settings["data"].dt)
    train_trajs, test_trajs = synthetic_split(settings["data"])
    return train_trajs if split == "train" else test_trajs


def _arrays(trajs, cfg, what):
    from .data import build_arrays

    if not trajs:
        raise ValueError(f"{what}: no scenes")
    return build_arrays(trajs, cfg.T, cfg.N, cfg.M)


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args, settings):
    from .data import KINDS, ScenarioSpec, generate_dataset, write_scenes

    d = settings["data"]
    if args.sigma is not None:
        d = replace(d, sigma=args.sigma)
    if args.spec == "default":
        mixture = d.mixture
    elif args.spec in KINDS:
        mixture = {args.spec: 1.0}
    else:
        raise UsageError(f"--spec must be 'default' or one of {KINDS}, got {args.spec!r}")
    n = args.scenes if args.scenes is not None else d.n_train
    if n < 0:
        raise UsageError("--scenes must be >= 0")
    seed = args.seed if args.seed is not None else d.train_seed
    base = ScenarioSpec(speed_range=tuple(d.speed_range), turn_rate_range=tuple(d.turn_rate_range), sigma=d.sigma, dt=d.dt, length=d.length)
    trajs = generate_dataset(n, seed, base, mixture)
    out = Path(args.out or "scenes.jsonl")
    write_scenes(out, trajs)
    _write_json(str(out) + ".config.json", {"spec": args.spec, "scenes": n, "seed": seed, "mixture": mixture, "data": d.to_dict()})
    print(f"wrote {n} scenes ({args.spec}, seed {seed}) to {out}")
    return EXIT_OK


def cmd_train(args, settings):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .trainer import train

    cfg = settings["train"]
    out = _out_dir(args, "run")
    trajs = _trajectories(args, settings, "train")
    data = _arrays(trajs, cfg, "training data")
    resume = load_checkpoint(args.resume, expect=cfg) if args.resume else None
    _write_json(out / "config.json", effective(settings))
    ck_path = out / "checkpoint.itpn"
    print(f"training {cfg.hash()} on {len(data)} scenes: N={cfg.N} C={cfg.C} nrrformer={cfg.nrrformer} seed={cfg.seed}")

    def progress(row):
        if args.verbose and row["step"] % 50 == 0:
            print(f"  step {row['step']:6d}  total {row['l_total']:.4f}")

    res = train(cfg, data, resume=resume, log_path=out / "train_log.csv", checkpoint_path=ck_path, progress=progress)
    ck = res.checkpoint()
    ck.meta["effective_config"] = effective(settings)
    save_checkpoint(ck, ck_path)
    if res.log:
        first, last = res.log[0]["l_total"], res.log[-1]["l_total"]
        print(f"done: {res.step} steps, total loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint: {ck_path}\nlog: {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_eval(args, settings):
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate
    from .trainer import from_checkpoint

    ck = load_checkpoint(args.checkpoint)
    model, _ = from_checkpoint(ck)
    cfg = model.config
    trajs = _trajectories(args, settings, "test")
    data = _arrays(trajs, cfg, "evaluation data")
    ks = tuple(args.k) if args.k else tuple(sorted({1, cfg.K}))
    report = evaluate(model, data, ks)
    out = _out_dir(args, "eval")
    doc = {"checkpoint": str(args.checkpoint), "model_config": cfg.to_dict(), "settings": effective(settings), **report.to_dict()}
    _write_json(out / "metrics.json", doc)
    lines = ["config_hash,K,n_scenes,minADE,minFDE,MR"]
    for K, m in sorted(report.metrics.items()):
        lines.append(f"{report.config_hash},{K},{report.n_scenes},{m['minADE']:.6f},{m['minFDE']:.6f},{m['MR']:.6f}")
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")
    print(f"evaluated {report.n_scenes} scenes with {report.config_hash}")
    for K, m in sorted(report.metrics.items()):
        print(f"  K={K}: minADE {m['minADE']:.4f}  minFDE {m['minFDE']:.4f}  MR {m['MR']:.4f}")
    return EXIT_OK


def cmd_ablate(args, settings):
    from .evaluation import ablation_sweep, synthetic_split
    from .numerics import NumericError

    out = _out_dir(args, "sweep")
    train_trajs, test_trajs = synthetic_split(settings["data"])

    def progress(cell):
        print(f"  N={cell.N:<3d} nrrformer={int(cell.nrrformer)} losses={cell.losses:<8s} T={cell.T} seed={cell.seed}: {cell.status} {cell.note}")

    res = ablation_sweep(settings["sweep"], settings["train"], train_trajs, test_trajs, out_dir=out, trend_tol=args.trend_tol, progress=progress)
    _write_json(out / "config.json", effective(settings))
    for c in res.cells:
        if c.status == "skipped":
            print(f"  N={c.N:<3d} nrrformer={int(c.nrrformer)} seed={c.seed}: skipped ({c.note})")
    print(res.table_csv, end="")
    print(f"artifacts in {out}")
    if res.failures:
        print(f"{res.failures} cell(s) failed", file=sys.stderr)
        numeric = any(c.status == "failed" and c.note.startswith(NumericError.__name__) for c in res.cells)
        return EXIT_NUMERIC if numeric else EXIT_DATA
    if res.trend is not None:
        for chk in res.trend["checks"]:
            print(f"trend {chk['losses']} T={chk['T']}: N=10 {chk['long']:.4f} vs N=3 {chk['short']:.4f} -> {'pass' if chk['passed'] else 'FAIL'}")
        if not res.trend["passed"]:
            print(res.trend.get("note", "trend check failed"), file=sys.stderr)
            return EXIT_ACCEPT
    return EXIT_OK


def cmd_gradcheck(args, settings):
    from .numerics import suite

    names = list(suite.PRIMITIVES) if args.all else args.op
    unknown = [n for n in names if n not in suite.PRIMITIVES]
    if unknown:
        raise UsageError(f"unknown primitive(s) {unknown}; choose from {sorted(suite.PRIMITIVES)}")
    seed = settings["train"].seed
    rows = []
    for name in names:
        err = suite.check_primitive(name, args.points, seed)
        rows.append((name, err, suite.TOL))
    if args.all:
        rep = suite.end_to_end(seed=seed)
        rows.append(("end_to_end", rep.max_rel_error, 1e-4))
    width = max(len(r[0]) for r in rows)
    print(f"{'primitive':<{width}}  max rel err  tol      result")
    ok = True
    for name, err, tol in rows:
        passed = err < tol
        ok &= passed
        print(f"{name:<{width}}  {err:.3e}    {tol:.0e}    {'pass' if passed else 'FAIL'}")
    if args.out:
        out = _out_dir(args, "gradcheck")
        _write_json(out / "gradcheck.json", {"points": args.points, "seed": seed, "rows": [list(r) for r in rows]})
    return EXIT_OK if ok else EXIT_ACCEPT


def parse_points(text):
    try:
        pts = [[float(v) for v in p.split(",")] for p in text.strip().split(";") if p.strip()]
    except ValueError:
        raise UsageError(f"--points must look like 'x,y;x,y', got {text!r}") from None
    if any(len(p) != 2 for p in pts):
        raise UsageError(f"--points must look like 'x,y;x,y', got {text!r}")
    return np.array(pts)


def cmd_predict(args, settings):
    from .checkpoint import load_checkpoint
    from .trainer import from_checkpoint, predict

    model, _ = from_checkpoint(load_checkpoint(args.checkpoint))
    pred = predict(model, parse_points(args.points))
    doc = {
        "config_hash": model.config.hash(),
        "trajectories": pred.trajectories.tolist(),
        "scores": pred.scores.tolist(),
    }
    print(json.dumps(doc))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "predict": cmd_predict,
}


def run(argv=None):
    from .checkpoint import CheckpointError
    from .data import SceneFormatError
    from .nrrformer import ConfigError
    from .numerics import NumericError

    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = load_settings(args)
        with thread_limit(args.threads):
            return COMMANDS[args.cmd](args, settings)
    except (UsageError, ConfigError) as exc:
        print(f"itpnet {args.cmd}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"itpnet {args.cmd}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SceneFormatError, CheckpointError, OSError, ValueError) as exc:
        print(f"itpnet {args.cmd}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())
