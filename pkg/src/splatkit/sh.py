"""Real spherical harmonics, degree 4, graphics normalization.

Coefficient layout is channel-major: 75 floats = [R 0..24][G 0..24][B 0..24],
basis index k = l*(l+1)+m. Colors evaluate as 0.5 + sum_k c_k * Y_k(dir);
the 0.5 offset makes all-zero coefficients render mid-gray. Values are
returned raw here; clamping to [0,1] happens at render time.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, ShapeError

N_COEFFS = 25        # (4+1)^2 per channel
N_SH = 75            # 3 channels
SH_DEGREE = 4

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)
C4 = (2.5033429417967046, -1.7701307697799304, 0.9461746957575601,
      -0.6690465435572892, 0.10578554691520431, -0.6690465435572892,
      0.47308734787878004, -1.7701307697799304, 0.6258357354491761)


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Evaluate all 25 basis functions at unit directions; (N,3) -> (N,25)."""
    d = np.asarray(dirs, dtype=np.float64)
    squeeze = d.ndim == 1
    if squeeze:
        d = d[None, :]
    if d.shape[-1] != 3:
        raise ShapeError(f"directions must be (...,3), got {d.shape}")
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out = np.empty((d.shape[0], N_COEFFS))
    out[:, 0] = C0
    out[:, 1] = -C1 * y
    out[:, 2] = C1 * z
    out[:, 3] = -C1 * x
    out[:, 4] = C2[0] * xy
    out[:, 5] = C2[1] * yz
    out[:, 6] = C2[2] * (2.0 * zz - xx - yy)
    out[:, 7] = C2[3] * xz
    out[:, 8] = C2[4] * (xx - yy)
    out[:, 9] = C3[0] * y * (3.0 * xx - yy)
    out[:, 10] = C3[1] * xy * z
    out[:, 11] = C3[2] * y * (4.0 * zz - xx - yy)
    out[:, 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[:, 13] = C3[4] * x * (4.0 * zz - xx - yy)
    out[:, 14] = C3[5] * z * (xx - yy)
    out[:, 15] = C3[6] * x * (xx - 3.0 * yy)
    out[:, 16] = C4[0] * xy * (xx - yy)
    out[:, 17] = C4[1] * yz * (3.0 * xx - yy)
    out[:, 18] = C4[2] * xy * (7.0 * zz - 1.0)
    out[:, 19] = C4[3] * yz * (7.0 * zz - 3.0)
    out[:, 20] = C4[4] * (zz * (35.0 * zz - 30.0) + 3.0)
    out[:, 21] = C4[5] * xz * (7.0 * zz - 3.0)
    out[:, 22] = C4[6] * (xx - yy) * (7.0 * zz - 1.0)
    out[:, 23] = C4[7] * xz * (xx - 3.0 * yy)
    out[:, 24] = C4[8] * (xx * (xx - 3.0 * yy) - yy * (3.0 * xx - yy))
    return out[0] if squeeze else out


def sh_eval(sh: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """One splat's 75 coefficients at one unit direction -> raw RGB."""
    c = np.asarray(sh, dtype=np.float64)
    if c.shape != (N_SH,):
        raise ShapeError(f"sh must have exactly {N_SH} values, got shape {c.shape}")
    d = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(d)
    if abs(norm - 1.0) > 1e-6:
        raise ContractError(f"direction must be unit length within 1e-6, |d|={norm}")
    basis = sh_basis(d)
    return 0.5 + c.reshape(3, N_COEFFS) @ basis


def eval_colors(sh: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Batched raw colors: (N,75) coefficients x (N,3) unit dirs -> (N,3)."""
    c = np.asarray(sh, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != N_SH:
        raise ShapeError(f"sh table must be (N,{N_SH}), got {c.shape}")
    basis = sh_basis(dirs)
    return 0.5 + np.einsum("nck,nk->nc", c.reshape(-1, 3, N_COEFFS), basis, optimize=True)


def dc_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """DC-only coefficient rows whose evaluation reproduces rgb; (N,3)->(N,75)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    out = np.zeros((rgb.shape[0], N_SH))
    out[:, 0::N_COEFFS] = (rgb - 0.5) / C0
    return out
