"""Gaussian scene representation: primitives, covariance, voxel merging.

Scenes store struct-of-arrays float64 columns so the renderer and
adapter work on contiguous blocks; `Gaussian` is the per-splat value
view used by single-primitive operations. Opacity is kept as a logit,
scale as per-axis logs, rotation as a unit quaternion (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sh as shmod
from .errors import ContractError, ShapeError


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


@dataclass(frozen=True)
class Gaussian:
    position: np.ndarray
    opacity_logit: float
    rotation: np.ndarray
    log_scale: np.ndarray
    sh: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.position, dtype=np.float64)
        rot = np.ascontiguousarray(self.rotation, dtype=np.float64)
        ls = np.ascontiguousarray(self.log_scale, dtype=np.float64)
        coeffs = np.ascontiguousarray(self.sh, dtype=np.float64)
        if pos.shape != (3,) or rot.shape != (4,) or ls.shape != (3,):
            raise ShapeError("Gaussian fields must be position(3), rotation(4), log_scale(3)")
        if coeffs.shape != (shmod.N_SH,):
            raise ShapeError(f"sh must have exactly {shmod.N_SH} values, got {coeffs.shape}")
        if abs(np.linalg.norm(rot) - 1.0) > 1e-9:
            raise ContractError("rotation quaternion must be unit length within 1e-9")
        scales = np.exp(ls)
        if not np.isfinite(scales).all() or (scales <= 0).any():
            raise ContractError("exp(log_scale) must be finite and positive")
        for name, arr in (("position", pos), ("rotation", rot), ("log_scale", ls), ("sh", coeffs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    """Unit quaternion(s) (w,x,y,z) to rotation matrix; (4,)->(3,3), (N,4)->(N,3,3)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3))
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r[0] if single else r


def covariance(g: Gaussian) -> np.ndarray:
    """World-space covariance R diag(s^2) R^T of one splat."""
    r = quat_to_rot(g.rotation)
    s2 = np.exp(2.0 * g.log_scale)
    return (r * s2) @ r.T


def covariances(rotations: np.ndarray, log_scales: np.ndarray) -> np.ndarray:
    """Batched world covariances; (N,4),(N,3) -> (N,3,3)."""
    r = quat_to_rot(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    return np.einsum("nij,nj,nkj->nik", r, s2, r, optimize=True)


@dataclass
class GaussianScene:
    positions: np.ndarray
    opacity_logits: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    sh: np.ndarray
    scene_id: str = ""
    sh_degree: int = field(default=shmod.SH_DEGREE)

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.ascontiguousarray(self.opacity_logits, dtype=np.float64).reshape(n)
        self.rotations = np.ascontiguousarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.ascontiguousarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64).reshape(n, shmod.N_SH)
        if self.sh_degree != shmod.SH_DEGREE:
            raise ContractError(f"scene sh_degree is fixed at {shmod.SH_DEGREE}")
        if n:
            norms = np.linalg.norm(self.rotations, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-9:
                raise ContractError("all rotation quaternions must be unit length within 1e-9")

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(position=self.positions[i], opacity_logit=float(self.opacity_logits[i]),
                        rotation=self.rotations[i], log_scale=self.log_scales[i], sh=self.sh[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @classmethod
    def from_gaussians(cls, gaussians, scene_id: str = "") -> "GaussianScene":
        gs = list(gaussians)
        if not gs:
            return cls.empty(scene_id)
        return cls(
            positions=np.stack([g.position for g in gs]),
            opacity_logits=np.array([g.opacity_logit for g in gs]),
            rotations=np.stack([g.rotation for g in gs]),
            log_scales=np.stack([g.log_scale for g in gs]),
            sh=np.stack([g.sh for g in gs]),
            scene_id=scene_id,
        )

    @classmethod
    def empty(cls, scene_id: str = "") -> "GaussianScene":
        return cls(positions=np.zeros((0, 3)), opacity_logits=np.zeros(0),
                   rotations=np.zeros((0, 4)), log_scales=np.zeros((0, 3)),
                   sh=np.zeros((0, shmod.N_SH)), scene_id=scene_id)

    def with_sh(self, sh: np.ndarray) -> "GaussianScene":
        return GaussianScene(positions=self.positions, opacity_logits=self.opacity_logits,
                             rotations=self.rotations, log_scales=self.log_scales,
                             sh=sh, scene_id=self.scene_id)


def voxel_merge(scene: GaussianScene, voxel_size: float) -> GaussianScene:
    """Fuse splats that share a voxel of side `voxel_size`.

    Per occupied voxel: position, log_scale, and sh are opacity-weighted
    means; rotation comes from the highest-opacity member (first such
    member on ties); merged opacity is 1 - prod(1 - opacity_i). Output is
    sorted by voxel index so the result is canonical regardless of input
    order bucketing.
    """
    if voxel_size <= 0:
        raise ContractError(f"voxel_size must be positive, got {voxel_size}")
    n = len(scene)
    if n == 0:
        return GaussianScene.empty(scene.scene_id)

    cells = np.floor(scene.positions / voxel_size).astype(np.int64)
    # canonical processing order: lexicographic voxel, then original index
    order = np.lexsort((np.arange(n), cells[:, 2], cells[:, 1], cells[:, 0]))
    cells_sorted = cells[order]
    boundary = np.ones(n, dtype=bool)
    boundary[1:] = np.any(cells_sorted[1:] != cells_sorted[:-1], axis=1)
    group_of = np.cumsum(boundary) - 1
    n_groups = group_of[-1] + 1

    opac = scene.opacities[order]
    weights = opac.copy()
    sums = np.bincount(group_of, weights=weights, minlength=n_groups)
    # opacities are strictly inside (0,1); guard only against pathological underflow
    safe = np.where(sums > 0, sums, 1.0)

    def wmean(col):
        flat = col.reshape(n, -1)
        out = np.empty((n_groups, flat.shape[1]))
        for j in range(flat.shape[1]):
            out[:, j] = np.bincount(group_of, weights=weights * flat[:, j], minlength=n_groups) / safe
        return out

    positions = wmean(scene.positions[order])
    log_scales = wmean(scene.log_scales[order])
    sh = wmean(scene.sh[order])

    # survival opacity 1 - prod(1 - o_i), accumulated in log space per group
    log_1m = np.log1p(-opac)
    survive = 1.0 - np.exp(np.bincount(group_of, weights=log_1m, minlength=n_groups))
    survive = np.clip(survive, 1e-12, 1.0 - 1e-12)

    # highest-opacity member per group, earliest wins ties
    best = np.full(n_groups, -1, dtype=np.int64)
    best_op = np.full(n_groups, -np.inf)
    for i in range(n):
        gidx = group_of[i]
        if opac[i] > best_op[gidx]:
            best_op[gidx] = opac[i]
            best[gidx] = order[i]
    rotations = scene.rotations[best]

    return GaussianScene(positions=positions, opacity_logits=logit(survive),
                         rotations=rotations, log_scales=log_scales, sh=sh,
                         scene_id=scene.scene_id)
