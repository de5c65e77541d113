"""PNG and raw-float image I/O plus bilinear resize.

Images in memory are float64 (H, W, 3) in [0, 1]. PNG output quantizes
with round(255 * clamp(c)); the ".wsim" dump keeps exact float64 values
for bit-level tests.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def save_png(path, image: np.ndarray) -> None:
    arr = np.asarray(image, dtype=np.float64)
    q = np.round(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(q, mode="RGB" if q.ndim == 3 else "L").save(Path(path))


def load_png(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return img


def load_png_gray(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64)


def load_png_rgba(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    return np.asarray(Image.open(path).convert("RGBA"), dtype=np.float64) / 255.0


WSIM_MAGIC = b"WSIM"


def save_wsim(path, image: np.ndarray) -> None:
    arr = np.ascontiguousarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    Path(path).write_bytes(WSIM_MAGIC + struct.pack("<III", h, w, c) + arr.astype("<f8").tobytes())


def load_wsim(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != WSIM_MAGIC:
        raise DataError(f"bad wsim magic: {buf[:4]!r}")
    h, w, c = struct.unpack_from("<III", buf, 4)
    return np.frombuffer(buf[16:16 + 8 * h * w * c], dtype="<f8").reshape(h, w, c).copy()


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Deterministic bilinear resample with half-pixel centers."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    if img.ndim == 3:
        fy = fy[:, :, None]
        fx = fx[:, :, None]
    a = img[np.ix_(y0, x0)]
    b = img[np.ix_(y0, x1)]
    c = img[np.ix_(y1, x0)]
    d = img[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bot = c * (1 - fx) + d * fx
    return top * (1 - fy) + bot * fy
