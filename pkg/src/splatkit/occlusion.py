"""Transient-object handling: masks, synthetic occluders, masked loss.

A TransientMask stores S with 1 marking transient pixels; supervision
uses the visibility weighting M = 1 - S. The masked reconstruction loss
is MSE plus a Sobel-gradient-magnitude term standing in for a perceptual
network, both computed on mask-multiplied images, so pixels with M = 0
receive exactly zero gradient.

The builtin occluder bank is 12 procedurally generated RGBA silhouettes
with hard (binary) alpha, so no image assets ship with the repo; a
directory of RGBA PNGs can replace it, enumerated in lexicographic
filename order.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import rng as rngmod
from .errors import ContractError, DataError, ShapeError
from .imgio import load_png_rgba

MIN_OCCLUDERS = 2
MAX_OCCLUDERS = 10
SCALE_RANGE = (0.1, 0.3)
ALPHA_MASK_THRESHOLD = 0.5
PLACEMENT_RETRIES = 8


@dataclass(frozen=True)
class TransientMask:
    width: int
    height: int
    S: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.S, dtype=np.uint8)
        if s.shape != (self.height, self.width):
            raise ShapeError(f"S must be ({self.height},{self.width}), got {s.shape}")
        if not np.isin(s, (0, 1)).all():
            raise ContractError("mask values must be 0 or 1")
        s.setflags(write=False)
        object.__setattr__(self, "S", s)

    @property
    def visibility(self) -> np.ndarray:
        return 1.0 - self.S.astype(np.float64)

    def check_pair(self, image: np.ndarray) -> None:
        if image.shape[:2] != (self.height, self.width):
            raise ContractError(
                f"mask {self.width}x{self.height} does not match image {image.shape[1]}x{image.shape[0]}")


def load_mask(path) -> TransientMask:
    path = Path(path)
    if not path.exists():
        raise DataError(f"mask not found: {path}")
    gray = np.asarray(Image.open(path).convert("L"))
    s = (gray >= 128).astype(np.uint8)
    return TransientMask(width=s.shape[1], height=s.shape[0], S=s)


def save_mask(path, mask: TransientMask) -> None:
    Image.fromarray((mask.S * 255).astype(np.uint8), mode="L").save(Path(path))


@dataclass(frozen=True)
class OccluderSprite:
    rgba: np.ndarray     # (h, w, 4), rgb premultiplied by alpha
    label: str

    def __post_init__(self):
        arr = np.ascontiguousarray(self.rgba, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 4:
            raise ShapeError(f"sprite must be (h,w,4), got {arr.shape}")
        if not (arr[:, :, 3] > 0).any():
            raise ContractError("sprite has empty alpha support")
        arr.setflags(write=False)
        object.__setattr__(self, "rgba", arr)


def _ellipse(canvas_a, cy, cx, ry, rx):
    h, w = canvas_a.shape
    ys, xs = np.mgrid[0:h, 0:w]
    canvas_a[((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0] = 1.0


def _box(canvas_a, y0, y1, x0, x1):
    canvas_a[y0:y1, x0:x1] = 1.0


def builtin_bank() -> list[OccluderSprite]:
    """12 deterministic silhouettes: person-like, car-like, and blobs."""
    sprites = []
    for i in range(4):  # person-like: head + torso
        gen = rngmod.stream(7321, "bank", i)
        a = np.zeros((48, 24))
        _ellipse(a, 8, 12, 7, 6)
        _box(a, 13, 40, 6, 18)
        _box(a, 40, 48, 7, 11)
        _box(a, 40, 48, 13, 17)
        color = gen.uniform(0.05, 0.95, 3)
        sprites.append(_solid_sprite(a, color, f"person_{i}"))
    for i in range(4):  # car-like: body + cabin + wheels
        gen = rngmod.stream(7321, "bank", 10 + i)
        a = np.zeros((24, 48))
        _box(a, 8, 18, 1, 47)
        _box(a, 2, 8, 12, 36)
        _ellipse(a, 18, 10, 5, 5)
        _ellipse(a, 18, 38, 5, 5)
        color = gen.uniform(0.05, 0.95, 3)
        sprites.append(_solid_sprite(a, color, f"car_{i}"))
    for i in range(4):  # blobs: union of random ellipses
        gen = rngmod.stream(7321, "bank", 20 + i)
        a = np.zeros((32, 32))
        for _ in range(4):
            _ellipse(a, gen.uniform(8, 24), gen.uniform(8, 24),
                     gen.uniform(4, 10), gen.uniform(4, 10))
        color = gen.uniform(0.05, 0.95, 3)
        sprites.append(_solid_sprite(a, color, f"blob_{i}"))
    return sprites


def _solid_sprite(alpha, color, label):
    rgba = np.zeros(alpha.shape + (4,))
    rgba[:, :, 3] = alpha
    rgba[:, :, :3] = alpha[:, :, None] * color  # premultiplied
    return OccluderSprite(rgba=rgba, label=label)


def load_bank(directory) -> list[OccluderSprite]:
    directory = Path(directory)
    paths = sorted(directory.glob("*.png"))
    if not paths:
        raise DataError(f"no PNG sprites in {directory}")
    sprites = []
    for p in paths:
        rgba = load_png_rgba(p)
        rgba[:, :, :3] *= rgba[:, :, 3:4]  # premultiply
        sprites.append(OccluderSprite(rgba=rgba, label=p.stem))
    return sprites


def _resize_nearest(rgba, th, tw):
    h, w = rgba.shape[:2]
    ys = np.minimum((np.floor((np.arange(th) + 0.5) * h / th)).astype(int), h - 1)
    xs = np.minimum((np.floor((np.arange(tw) + 0.5) * w / tw)).astype(int), w - 1)
    return rgba[np.ix_(ys, xs)]


def composite_occluders(image: np.ndarray, bank: list[OccluderSprite], rng_seed: int):
    """Paste 2..10 random sprites into the lower image half.

    Returns (occluded image, TransientMask). Sprites are drawn with
    replacement, scaled to a uniform fraction in [0.1, 0.3] of image
    height (aspect preserved, nearest-neighbor), and placed so their
    bounding box lies entirely in rows >= H/2. A sprite that cannot fit
    after bounded rescaling retries is skipped. Fully deterministic in
    the seed.
    """
    if not bank:
        raise ContractError("occluder bank is empty")
    img = np.asarray(image, dtype=np.float64).copy()
    h, w = img.shape[:2]
    half = (h + 1) // 2
    gen = rngmod.stream(rng_seed, "occluder")
    n = int(gen.integers(MIN_OCCLUDERS, MAX_OCCLUDERS + 1))
    s = np.zeros((h, w), dtype=np.uint8)

    for _ in range(n):
        placed = False
        for _attempt in range(PLACEMENT_RETRIES):
            sprite = bank[int(gen.integers(len(bank)))]
            frac = gen.uniform(*SCALE_RANGE)
            sh, sw = sprite.rgba.shape[:2]
            th = max(1, int(round(frac * h)))
            tw = max(1, int(round(th * sw / sh)))
            if th > h - half or tw > w:
                continue  # too large after scaling; resample
            top = int(gen.integers(half, h - th + 1))
            left = int(gen.integers(0, w - tw + 1))
            patch = _resize_nearest(sprite.rgba, th, tw)
            region = img[top:top + th, left:left + tw]
            a = patch[:, :, 3:4]
            img[top:top + th, left:left + tw] = patch[:, :, :3] + region * (1.0 - a)
            s[top:top + th, left:left + tw] |= (patch[:, :, 3] > ALPHA_MASK_THRESHOLD)
            placed = True
            break
        if not placed:
            continue
    return img, TransientMask(width=w, height=h, S=s)


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def _sobel_kernels():
    kx = np.zeros((3, 3, 3, 3))
    ky = np.zeros((3, 3, 3, 3))
    for c in range(3):
        kx[c, c] = SOBEL_X
        ky[c, c] = SOBEL_Y
    return kx, ky


_KX, _KY = _sobel_kernels()


def sobel_magnitude(image):
    """Per-channel Sobel gradient magnitude on the valid interior; smooth
    at zero via a 1e-12 floor inside the sqrt."""
    chw = ad.transpose(image, (2, 0, 1))
    gx = ad.conv2d(chw, _KX, 1)
    gy = ad.conv2d(chw, _KY, 1)
    return ad.sqrt(ad.add(ad.add(ad.square(gx), ad.square(gy)), 1e-12))


def masked_loss(target: np.ndarray, rendered, visibility: np.ndarray, lam: float,
                normalize: str = "all"):
    """Occlusion-masked reconstruction loss, Eq-style MSE + Sobel surrogate.

    `visibility` is M = 1 - S (1 keeps a pixel). Both images are
    multiplied by M before comparison; with normalize="all" the MSE
    averages over every pixel so masked pixels contribute zero, with
    "visible" it divides by the visible count instead. Differentiable in
    `rendered`; gradients vanish exactly where M = 0.
    """
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    if normalize not in ("all", "visible"):
        raise ContractError(f"unknown normalization {normalize!r}")
    tgt = np.asarray(target, dtype=np.float64)
    rend_v = ad.value_of(rendered)
    if tgt.shape != rend_v.shape:
        raise ContractError(f"image shapes differ: {tgt.shape} vs {rend_v.shape}")
    m = np.asarray(visibility, dtype=np.float64)
    if m.shape != tgt.shape[:2]:
        raise ContractError(f"mask shape {m.shape} does not match image {tgt.shape[:2]}")
    if not isinstance(rendered, ad.DiffNode):
        rendered = ad.leaf(rendered)

    m3 = m[:, :, None]
    masked_target = tgt * m3
    masked_render = ad.mul(rendered, m3)
    diff = ad.square(ad.sub(masked_render, masked_target))
    if normalize == "all":
        mse = ad.mean(diff)
    else:
        denom = max(1.0, 3.0 * float(m.sum()))
        mse = ad.mul(ad.total(diff), 1.0 / denom)

    if lam == 0.0:
        return mse

    grad_target = sobel_magnitude(masked_target)
    grad_render = sobel_magnitude(masked_render)
    percep = ad.mean(ad.square(ad.sub(grad_render, ad.value_of(grad_target))))
    return ad.add(mse, ad.mul(percep, lam))
