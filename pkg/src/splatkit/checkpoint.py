"""Flat binary parameter checkpoints.

Layout (all little-endian):
    magic  b"WSKT"
    u32    version (currently 1)
    repeated records until EOF:
        u32      name length in bytes
        bytes    name, UTF-8
        u32      shape rank
        u64[r]   shape dims
        f64[n]   row-major data

Round trips are bit-exact; record order is preserved.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import DataError

MAGIC = b"WSKT"
VERSION = 1


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8", copy=False).tobytes())
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != MAGIC:
        raise DataError(f"bad checkpoint magic in {path}: {buf[:4]!r}")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 8
    n = len(buf)
    while off < n:
        if off + 4 > n:
            raise DataError(f"truncated checkpoint record header at byte {off}")
        (name_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        name = buf[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", buf, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, off)
        off += 8 * rank
        count = int(np.prod(shape)) if rank else 1
        end = off + 8 * count
        if end > n:
            raise DataError(f"truncated checkpoint data for '{name}' at byte {off}")
        out[name] = np.frombuffer(buf[off:end], dtype="<f8").reshape(shape).copy()
        off = end
    return out
