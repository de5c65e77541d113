"""Named-stream deterministic RNG.

Every random draw in the package funnels through `stream(root_seed, name,
*keys)`. Streams are independent of each other and of call order: the
generator state is derived purely from (root_seed, name, keys), so an
ablation that skips one stream leaves all others bit-identical, and a
resumed run can rebuild any stream from its coordinates alone.

Stream names in use: "scene", "lighting", "occluder", "init", "train".
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(root_seed: int, name: str, *keys: int) -> np.random.Generator:
    """Fresh PCG64 generator for the (seed, name, keys) coordinate."""
    tag = zlib.crc32(name.encode("utf-8"))
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF, tag, *[int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
