"""Run configuration with validation and JSON round-tripping.

Defaults follow the HiVT-style setting: d=64, three NRR blocks,
alpha = beta = 0.1. ``N``/``C``/``M``/``dt`` come from a dataset profile; the
default ``nuscenes`` profile (N=4, C=2, M=12, dt=0.5 s) matches the
synthetic benchmark.
"""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields

from .decoder import FAMILIES, LossWeights
from .nrrformer import ConfigError

PROFILES = {
    "nuscenes": {"N": 4, "C": 2, "M": 12, "dt": 0.5},
    "argoverse": {"N": 10, "C": 4, "M": 30, "dt": 0.1},
}

# Fields that change parameter shapes; a checkpoint only loads into a config
# that agrees on all of them.
ARCH_FIELDS = ("T", "N", "M", "K", "C", "L", "d", "heads", "ffn_inner", "decoder_hidden", "family", "nrrformer")


@dataclass
class TrainConfig:
    T: int = 2
    N: int = 4
    M: int = 12
    K: int = 6
    C: int = 2
    L: int = 3
    d: int = 64
    heads: int = 4
    ffn_inner: int = 256
    decoder_hidden: int = 128
    margin: float = 1.0
    alpha: float = 0.1
    beta: float = 0.1
    epsilon: float = 0.2
    family: str = "laplace-ce"
    nrrformer: bool = True
    stop_gradient_target: bool = False
    wta: str = "mean"
    disp_scale: float = 5.0
    traj_scale: float = 5.0
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 16
    steps: int = 0  # > 0 overrides epochs
    seed: int = 0
    checkpoint_every: int = 0

    def validate(self):
        pos = ("T", "M", "K", "C", "L", "d", "heads", "ffn_inner", "decoder_hidden", "batch_size")
        for name in pos:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.T < 2:
            raise ConfigError(f"T must be >= 2, got {self.T}")
        if self.N < 0:
            raise ConfigError(f"N must be >= 0, got {self.N}")
        if self.d % self.heads:
            raise ConfigError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.nrrformer:
            if self.N == 0:
                raise ConfigError("the NRRFormer needs N > 0; disable it for the N=0 baseline")
            if self.C >= self.N:
                raise ConfigError(f"query length C={self.C} must be smaller than N={self.N}")
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.wta not in ("mean", "endpoint"):
            raise ConfigError(f"wta must be 'mean' or 'endpoint', got {self.wta!r}")
        for name in ("margin", "alpha", "beta", "epsilon"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.lr <= 0 or self.disp_scale <= 0 or self.traj_scale <= 0:
            raise ConfigError("lr, disp_scale and traj_scale must be > 0")
        if self.epochs < 1 and self.steps < 1:
            raise ConfigError("need epochs >= 1 or steps >= 1")
        return self

    @property
    def weights(self):
        return LossWeights(self.alpha, self.beta, self.epsilon, self.family)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked(cls, d, "train")).validate()

    def replace(self, **kw):
        return dataclasses.replace(self, **kw).validate()

    def hash(self):
        return config_hash(self.to_dict())


def _checked(cls, d, section):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    out = {}
    for k, v in d.items():
        default = known[k].default
        if isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"[{section}].{k} must be a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"[{section}].{k} must be an integer")
        elif isinstance(default, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"[{section}].{k} must be a number")
            v = float(v)
        elif isinstance(default, tuple):
            v = tuple(v)
        out[k] = v
    return out


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:12]


def profile_config(profile="nuscenes", **overrides):
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    p = {k: v for k, v in PROFILES[profile].items() if k != "dt"}
    p.update(overrides)
    return TrainConfig(**p).validate()


@dataclass
class DataConfig:
    n_train: int = 2000
    n_test: int = 500
    sigma: float = 0.0
    dt: float = 0.5
    length: int = 24  # must cover the largest N + T + M used
    speed_range: tuple = (5.0, 15.0)
    turn_rate_range: tuple = (0.1, 0.5)
    mixture: dict = field(default_factory=lambda: {"straight": 0.4, "constant-turn": 0.3, "turn-after-straight": 0.3})
    train_seed: int = 1
    test_seed: int = 2

    def validate(self):
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("n_train must be >= 1 and n_test >= 0")
        if self.sigma < 0 or self.dt <= 0:
            raise ConfigError("sigma must be >= 0 and dt > 0")
        from .data import KINDS

        bad = sorted(set(self.mixture) - set(KINDS))
        if bad:
            raise ConfigError(f"unknown scenario kinds in mixture: {bad}")
        if not self.mixture or any(v < 0 for v in self.mixture.values()) or sum(self.mixture.values()) <= 0:
            raise ConfigError("mixture weights must be non-negative with a positive sum")
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["speed_range"] = list(self.speed_range)
        d["turn_rate_range"] = list(self.turn_rate_range)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked(cls, d, "data")).validate()


@dataclass
class SweepConfig:
    N_values: tuple = (0, 2, 3, 4, 10)
    nrrformer: tuple = (False, True)
    losses: tuple = ("rec+cts",)  # any of "none", "rec", "rec+cts"
    T_values: tuple = (2,)
    seeds: tuple = (0, 1, 2)
    K_values: tuple = (1, 6)

    def validate(self):
        for name in ("N_values", "nrrformer", "losses", "T_values", "seeds", "K_values"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"sweep grid axis {name} is empty")
        bad = sorted(set(self.losses) - {"none", "rec", "rec+cts"})
        if bad:
            raise ConfigError(f"unknown loss toggles {bad}")
        return self

    def to_dict(self):
        return {k: list(v) for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked(cls, d, "sweep")).validate()


SECTIONS = {"train": TrainConfig, "data": DataConfig, "sweep": SweepConfig}


def load_config_file(path):
    """Parse a JSON config file with optional ``profile``, ``train``, ``data`` and ``sweep`` sections."""
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)


def parse_config(raw):
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS) - {"profile"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    profile = raw.get("profile", "nuscenes")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    train = {k: v for k, v in PROFILES[profile].items() if k != "dt"}
    train.update(raw.get("train", {}))
    data = {"dt": PROFILES[profile]["dt"]}
    data.update(raw.get("data", {}))
    return {
        "profile": profile,
        "train": TrainConfig.from_dict(train),
        "data": DataConfig.from_dict(data),
        "sweep": SweepConfig.from_dict(raw.get("sweep", {})),
    }
