"""Image-quality metrics: PSNR and Gaussian-windowed SSIM.

PSNR uses peak 1.0 and caps the identical-image +inf at 99 dB. The
optional mask selects evaluated pixels and PSNR divides by the unmasked
count (unlike the training loss, which averages over all pixels; both
conventions are intentional and documented side by side). SSIM follows
the standard 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=1,
valid window positions only, channel-averaged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedMetricError

PSNR_CAP_DB = 99.0


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    n_pixels_evaluated: int
    mask_applied: bool

    def to_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim,
                "n_pixels_evaluated": self.n_pixels_evaluated,
                "mask_applied": self.mask_applied}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10*log10(1/MSE) over evaluated pixels, capped at 99 dB."""
    a, b = _check_pair(a, b)
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[:2]:
            raise ContractError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
        if not m.any():
            raise UndefinedMetricError("PSNR over an empty evaluation set")
        sq = sq[m]
    mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, float(10.0 * np.log10(1.0 / mse)))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5) -> float:
    """Mean local SSIM over valid window positions, channel-averaged."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w = a.shape[:2]
    if h < window or w < window:
        raise ContractError(f"images must be at least {window}x{window}, got {h}x{w}")

    win = gaussian_window(window, sigma)
    k1, k2, peak = 0.01, 0.03, 1.0
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def windows(x):
        v = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(0, 1))
        return np.einsum("hwcpq,pq->hwc", v, win, optimize=True)

    mu_a = windows(a)
    mu_b = windows(b)
    mu_aa = windows(a * a)
    mu_bb = windows(b * b)
    mu_ab = windows(a * b)
    var_a = mu_aa - mu_a ** 2
    var_b = mu_bb - mu_b ** 2
    cov = mu_ab - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float((num / den).mean())
