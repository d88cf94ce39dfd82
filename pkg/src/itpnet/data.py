"""Synthetic driving scenes, scene files, and trajectory segmentation.

Index convention for a segmented sample (``N`` unobserved, ``T`` observed,
``M`` future points)::

    x_unobs: -N+1 .. 0      x_obs: 1 .. T      x_gt: T+1 .. T+M

Scene files
-----------
JSONL: one object per line, ``{"scene_id": str, "agent_id": str, "dt": float,
"points": [[t_index, x, y], ...]}``.

CSV: header ``scene_id,agent_id,t,x,y``; ``t`` is the integer step index and
the sampling interval is passed to :func:`load_scenes`.

In both formats step indices of one agent must be contiguous and strictly
increasing.
"""

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import stream

KINDS = ("straight", "constant-turn", "turn-after-straight", "lane-change")
DEFAULT_MIXTURE = {"straight": 0.4, "constant-turn": 0.3, "turn-after-straight": 0.3}


class SceneFormatError(ValueError):
    """A scene file could not be parsed; the message names file and line."""


@dataclass
class Trajectory:
    points: np.ndarray  # (L, 2), meters
    dt: float
    scene_id: str = "0"
    agent_id: str = "0"
    kind: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.isfinite(self.points).all():
            raise ValueError(f"trajectory {self.scene_id}/{self.agent_id} has non-finite coordinates")

    def __len__(self):
        return len(self.points)


@dataclass
class ScenarioSpec:
    kind: str = "straight"
    speed_range: tuple = (5.0, 15.0)
    turn_rate_range: tuple = (0.1, 0.5)
    sigma: float = 0.0
    dt: float = 0.5
    length: int = 24
    horizon: int = 12  # future points; the turn of turn-after-straight starts here
    jitter: int = 2

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError(f"speed range must satisfy 0 < lo <= hi, got {self.speed_range}")
        wlo, whi = self.turn_rate_range
        if not 0 <= wlo <= whi:
            raise ValueError(f"turn-rate range must satisfy 0 <= lo <= hi, got {self.turn_rate_range}")
        if self.sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.length < 2 or not 0 <= self.horizon < self.length:
            raise ValueError(f"need length >= 2 and 0 <= horizon < length, got {self.length}, {self.horizon}")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        return self


def _integrate(start, heading, speed, rates, dt):
    """Exact arc integration of a unicycle with per-step turn rates."""
    pts = np.empty((len(rates) + 1, 2))
    pts[0] = start
    x, y = start
    th = heading
    for k, w in enumerate(rates):
        if w == 0.0:
            x += speed * dt * math.cos(th)
            y += speed * dt * math.sin(th)
        else:
            r = speed / w
            x += r * (math.sin(th + w * dt) - math.sin(th))
            y -= r * (math.cos(th + w * dt) - math.cos(th))
        th += w * dt
        pts[k + 1] = (x, y)
    return pts


def turn_profile(kind, n_steps, rate, switch, rng=None):
    """Per-step turn rates for ``n_steps`` integration steps."""
    rates = np.zeros(n_steps)
    if kind == "constant-turn":
        rates[:] = rate
    elif kind == "turn-after-straight":
        rates[max(switch, 0) :] = rate
    elif kind == "lane-change":
        half = max(1, min(4, (n_steps - max(switch, 0)) // 2))
        s = max(switch, 0)
        rates[s : s + half] = rate
        rates[s + half : s + 2 * half] = -rate
    return rates


def generate_scene(spec, seed, index=0):
    """Generate one kinematically consistent trajectory of ``spec.length`` points.

    Speed is constant; heading integrates the kind's turn-rate profile; i.i.d.
    Gaussian noise with std ``spec.sigma`` is added to every coordinate. The
    random stream is derived from ``(seed, index)``.
    """
    spec.validate()
    rng = stream(seed, "scene", index)
    speed = rng.uniform(*spec.speed_range)
    rate = rng.uniform(*spec.turn_rate_range) * rng.choice((-1.0, 1.0))
    heading = rng.uniform(-math.pi, math.pi)
    start = rng.uniform(-50.0, 50.0, size=2)
    jitter = int(rng.integers(-spec.jitter, spec.jitter + 1))
    # Point index of the first future point is length - horizon; the step that
    # leaves the last observed point has the same index minus one.
    switch = spec.length - spec.horizon - 1 + jitter
    rates = turn_profile(spec.kind, spec.length - 1, rate, switch)
    pts = _integrate(start, heading, speed, rates, spec.dt)
    if spec.sigma > 0:
        pts = pts + rng.normal(0.0, spec.sigma, size=pts.shape)
    return Trajectory(pts, spec.dt, scene_id=str(index), agent_id="0", kind=spec.kind)


def generate_dataset(n_scenes, seed, base=None, mixture=None):
    """Draw ``n_scenes`` scenes with kinds sampled from ``mixture``.

    Scene ``i`` depends only on ``(seed, i)``, so any subset can be regenerated
    independently.
    """
    base = ScenarioSpec() if base is None else base
    mixture = DEFAULT_MIXTURE if mixture is None else mixture
    kinds = list(mixture)
    probs = np.array([mixture[k] for k in kinds], dtype=float)
    probs = probs / probs.sum()
    out = []
    for i in range(n_scenes):
        kind = kinds[int(stream(seed, "kind", i).choice(len(kinds), p=probs))]
        out.append(generate_scene(replace(base, kind=kind), seed, i))
    return out


# -- segmentation and frames --------------------------------------------------


@dataclass
class Frame:
    """Agent-centric transform ``p' = R (p - origin)``."""

    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(2))

    def apply(self, pts):
        return (np.asarray(pts) - self.origin) @ self.rotation.T

    def invert(self, pts):
        return np.asarray(pts) @ self.rotation + self.origin


@dataclass
class SegmentedSample:
    x_obs: np.ndarray  # (T, 2)
    x_unobs: np.ndarray  # (N, 2)
    x_gt: np.ndarray  # (M, 2)
    frame: Frame = field(default_factory=Frame)
    dt: float = 0.5
    scene_id: str = "0"


def segment(traj, T, N, M, start=0):
    """Cut ``N + T + M`` contiguous points starting at ``start``."""
    if T < 1 or N < 0 or M < 1:
        raise ValueError(f"invalid window sizes T={T}, N={N}, M={M}")
    need = N + T + M
    if start < 0 or len(traj) - start < need:
        raise ValueError(
            f"trajectory {traj.scene_id} too short: need {need} points from offset {start}, "
            f"have {len(traj) - start}"
        )
    p = traj.points[start : start + need]
    return SegmentedSample(
        x_obs=p[N : N + T].copy(),
        x_unobs=p[:N].copy(),
        x_gt=p[N + T :].copy(),
        dt=traj.dt,
        scene_id=traj.scene_id,
    )


def heading_frame(x_obs):
    """Frame with the last observed point at the origin and observed heading along +x.

    Two identical final points give no heading; the rotation is then identity.
    """
    origin = np.array(x_obs[-1], dtype=np.float64)
    h = origin - x_obs[-2]
    norm = math.hypot(h[0], h[1])
    if norm == 0.0:
        return Frame(origin, np.eye(2))
    c, s = h[0] / norm, h[1] / norm
    return Frame(origin, np.array([[c, s], [-s, c]]))


def normalize_frame(sample):
    if len(sample.x_obs) < 2:
        raise ValueError("normalize_frame needs at least 2 observed points")
    fr = heading_frame(sample.x_obs)
    return SegmentedSample(
        x_obs=fr.apply(sample.x_obs),
        x_unobs=fr.apply(sample.x_unobs).reshape(-1, 2),
        x_gt=fr.apply(sample.x_gt),
        frame=fr,
        dt=sample.dt,
        scene_id=sample.scene_id,
    )


@dataclass
class SceneArrays:
    """Normalized samples stacked for batched training/evaluation."""

    x_obs: np.ndarray  # (S, T, 2)
    x_unobs: np.ndarray  # (S, N, 2)
    x_gt: np.ndarray  # (S, M, 2)
    origins: np.ndarray  # (S, 2)
    rotations: np.ndarray  # (S, 2, 2)

    def __len__(self):
        return len(self.x_obs)

    def take(self, idx):
        return SceneArrays(*(a[idx] for a in (self.x_obs, self.x_unobs, self.x_gt, self.origins, self.rotations)))


def build_arrays(trajs, T, N, M, align="end"):
    """Segment and normalize every trajectory.

    ``align="end"`` places the future window at the end of each trajectory so
    the observed and future points do not move when ``N`` changes;
    ``align="start"`` uses a start cursor of 0.
    """
    xs, xu, xg, orgs, rots = [], [], [], [], []
    for tr in trajs:
        start = len(tr) - (N + T + M) if align == "end" else 0
        if start < 0:
            raise ValueError(f"trajectory {tr.scene_id} has {len(tr)} points, need {N + T + M} (T={T}, N={N}, M={M})")
        s = normalize_frame(segment(tr, T, N, M, start=start))
        xs.append(s.x_obs)
        xu.append(s.x_unobs)
        xg.append(s.x_gt)
        orgs.append(s.frame.origin)
        rots.append(s.frame.rotation)
    if not xs:
        return SceneArrays(np.zeros((0, T, 2)), np.zeros((0, N, 2)), np.zeros((0, M, 2)), np.zeros((0, 2)), np.zeros((0, 2, 2)))
    return SceneArrays(np.stack(xs), np.stack(xu).reshape(len(xs), N, 2), np.stack(xg), np.stack(orgs), np.stack(rots))


# -- scene files --------------------------------------------------------------


def _fmt(path, fmt):
    if fmt is not None:
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in (".jsonl", ".json"):
        return "jsonl"
    if suffix == ".csv":
        return "csv"
    raise SceneFormatError(f"{path}: cannot infer format from suffix {suffix!r}; pass fmt")


def _check_steps(path, where, key, steps):
    for a, b in zip(steps, steps[1:]):
        if b <= a:
            raise SceneFormatError(f"{path}:{where}: timestamps of {key} not strictly increasing ({a} then {b})")
        if b != a + 1:
            raise SceneFormatError(f"{path}:{where}: timestamps of {key} not contiguous ({a} then {b})")


def load_scenes(path, fmt=None, dt=0.5, sort=False):
    """Read trajectories from a JSONL or CSV scene file.

    ``sort=True`` reorders each agent's CSV rows by step index instead of
    rejecting out-of-order rows. ``dt`` applies to CSV only.
    """
    fmt = _fmt(path, fmt)
    text = Path(path).read_text()
    if fmt == "jsonl":
        return _load_jsonl(path, text)
    if fmt == "csv":
        return _load_csv(path, text, dt, sort)
    raise SceneFormatError(f"unknown scene format {fmt!r}")


def _load_jsonl(path, text):
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            sid, aid, dt = str(obj["scene_id"]), str(obj["agent_id"]), float(obj["dt"])
            rows = [(int(p[0]), float(p[1]), float(p[2])) for p in obj["points"]]
        except (ValueError, KeyError, TypeError, IndexError) as exc:
            raise SceneFormatError(f"{path}:{lineno}: malformed scene record ({exc})") from None
        if not rows:
            raise SceneFormatError(f"{path}:{lineno}: scene has no points")
        _check_steps(path, lineno, f"{sid}/{aid}", [r[0] for r in rows])
        try:
            out.append(Trajectory([r[1:] for r in rows], dt, sid, aid))
        except ValueError as exc:
            raise SceneFormatError(f"{path}:{lineno}: {exc}") from None
    return out


def _load_csv(path, text, dt, sort):
    lines = text.splitlines()
    if not lines:
        return []
    reader = csv.reader(lines)
    header = next(reader)
    if [h.strip() for h in header] != ["scene_id", "agent_id", "t", "x", "y"]:
        raise SceneFormatError(f"{path}:1: expected header scene_id,agent_id,t,x,y, got {','.join(header)}")
    groups = {}
    for lineno, row in enumerate(reader, 2):
        if not row:
            continue
        try:
            sid, aid, t, x, y = row
            rec = (int(t), float(x), float(y), lineno)
        except ValueError as exc:
            raise SceneFormatError(f"{path}:{lineno}: malformed row {row!r} ({exc})") from None
        groups.setdefault((sid, aid), []).append(rec)
    out = []
    for (sid, aid), recs in groups.items():
        if sort:
            recs = sorted(recs, key=lambda r: r[0])
        for a, b in zip(recs, recs[1:]):
            if b[0] <= a[0]:
                raise SceneFormatError(
                    f"{path}:{b[3]}: timestamps of {sid}/{aid} not strictly increasing ({a[0]} then {b[0]}); "
                    "pass sort=True to reorder"
                )
        _check_steps(path, recs[0][3], f"{sid}/{aid}", [r[0] for r in recs])
        try:
            out.append(Trajectory([r[1:3] for r in recs], dt, sid, aid))
        except ValueError as exc:
            raise SceneFormatError(f"{path}:{recs[0][3]}: {exc}") from None
    return out


def write_scenes(path, trajs, fmt=None):
    fmt = _fmt(path, fmt)
    with open(path, "w", newline="") as fh:
        if fmt == "jsonl":
            for tr in trajs:
                rec = {
                    "scene_id": tr.scene_id,
                    "agent_id": tr.agent_id,
                    "dt": tr.dt,
                    "points": [[i, float(x), float(y)] for i, (x, y) in enumerate(tr.points)],
                }
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        else:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene_id", "agent_id", "t", "x", "y"])
            for tr in trajs:
                for i, (x, y) in enumerate(tr.points):
                    w.writerow([tr.scene_id, tr.agent_id, i, repr(float(x)), repr(float(y))])
