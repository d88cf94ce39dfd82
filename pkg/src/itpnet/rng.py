"""Seeded random streams.

All randomness comes from NumPy's Philox4x64 counter-based generator keyed by
``SeedSequence((seed, crc32(tag), index))``. Distinct tags (``"init"``,
``"scene"``, ``"batch"`` ...) give independent streams, and per-item streams
make parallel and serial generation agree.
"""

import zlib

import numpy as np


def stream(seed, tag, index=0):
    key = (int(seed), zlib.crc32(tag.encode()), int(index))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
