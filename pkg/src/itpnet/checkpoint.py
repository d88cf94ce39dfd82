"""Binary checkpoint files.

Layout (all integers little-endian)::

    b"ITPN"                         magic
    u32 version
    u32 n, n bytes                  canonical JSON: {"config": ..., "meta": ...}
    repeated tensor records:
        u32 name length, name (utf-8)
        u32 rank, rank x u32 dims
        prod(dims) x float64
    u32 CRC32 of every preceding byte

Tensor names are the model's parameter names, plus ``adam/m/<name>`` and
``adam/v/<name>`` for the optimizer moments.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .config import ARCH_FIELDS, TrainConfig, canonical_json

MAGIC = b"ITPN"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: TrainConfig
    tensors: dict  # parameter name -> ndarray
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)  # step, adam hyper-parameters, rng position

    @property
    def step(self):
        return int(self.meta.get("step", 0))


def encode(ck):
    blob = canonical_json({"config": ck.config.to_dict(), "meta": ck.meta}).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(blob)), blob]
    records = list(ck.tensors.items())
    records += [(f"adam/m/{k}", v) for k, v in ck.adam_m.items()]
    records += [(f"adam/v/{k}", v) for k, v in ck.adam_v.items()]
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf, end):
        self.buf, self.pos, self.end = buf, 0, end

    def take(self, n):
        if self.pos + n > self.end:
            raise CheckpointTruncatedError(f"checkpoint truncated: need {n} bytes at offset {self.pos}, file body ends at {self.end}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def _parse(buf, end):
    r = _Reader(buf, end)
    r.take(8)  # magic + version, already checked
    meta = json.loads(r.take(r.u32()).decode())
    tensors = {}
    while r.pos < end:
        name = r.take(r.u32()).decode()
        rank = r.u32()
        if rank > 8:
            raise CheckpointTruncatedError(f"implausible tensor rank {rank} for {name!r}")
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
    return meta, tensors


def decode(buf):
    if buf[:4] != MAGIC:
        raise CheckpointError("not an ITPN checkpoint (bad magic)")
    if len(buf) < 16:
        raise CheckpointTruncatedError("checkpoint truncated inside the header")
    version = struct.unpack("<I", buf[4:8])[0]
    if version != VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, this build reads version {VERSION}")
    body_end = len(buf) - 4
    crc_ok = zlib.crc32(buf[:body_end]) == struct.unpack("<I", buf[body_end:])[0]
    try:
        meta, tensors = _parse(buf, body_end)
    except CheckpointTruncatedError:
        if crc_ok:
            raise
        raise CheckpointTruncatedError("checkpoint truncated or corrupted (structure overruns file)") from None
    except (UnicodeDecodeError, json.JSONDecodeError, ValueError) as exc:
        raise CheckpointChecksumError(f"checkpoint corrupted ({exc})") from None
    if not crc_ok:
        raise CheckpointChecksumError("checkpoint CRC32 mismatch")
    config = TrainConfig.from_dict(meta["config"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam/")}
    m = {k[len("adam/m/") :]: v for k, v in tensors.items() if k.startswith("adam/m/")}
    v = {k[len("adam/v/") :]: v for k, v in tensors.items() if k.startswith("adam/v/")}
    return Checkpoint(config, params, m, v, meta["meta"])


def save_checkpoint(ck, path):
    data = encode(ck)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def check_compatible(saved, expected):
    bad = [f for f in ARCH_FIELDS if getattr(saved, f) != getattr(expected, f)]
    if bad:
        detail = ", ".join(f"{f}: checkpoint={getattr(saved, f)!r} config={getattr(expected, f)!r}" for f in bad)
        raise CheckpointConfigError(f"checkpoint incompatible with config ({detail})")


def load_checkpoint(path, expect=None):
    """Read a checkpoint; with ``expect`` (a TrainConfig) reject shape-incompatible configs."""
    with open(path, "rb") as fh:
        ck = decode(fh.read())
    if expect is not None:
        check_compatible(ck.config, expect)
    return ck
