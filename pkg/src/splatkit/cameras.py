"""Pinhole cameras, projection, and depth-map handling.

Extrinsics are stored world-to-camera throughout; every serialized camera
carries the literal convention string "w2c" and loading rejects anything
else. No distortion model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCameraError, ContractError, DataError, ShapeError


def _frozen_array(x, shape, name):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.shape != shape:
        raise ShapeError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ContractError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ContractError(f"image size must be >= 1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class Extrinsics:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen_array(self.rotation, (3, 3), "rotation"))
        object.__setattr__(self, "translation", _frozen_array(self.translation, (3,), "translation"))
        r = self.rotation
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ContractError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ContractError("rotation determinant is not +1 within 1e-9")

    def camera_center(self) -> np.ndarray:
        """World-space camera position -R^T t."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class DepthMap:
    width: int
    height: int
    values: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        vals = _frozen_array(self.values, (self.height, self.width), "values")
        mask = np.ascontiguousarray(self.validity, dtype=bool)
        if mask.shape != (self.height, self.width):
            raise ShapeError(f"validity must have shape {(self.height, self.width)}, got {mask.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "validity", mask)
        picked = vals[mask]
        if picked.size and (not np.isfinite(picked).all() or (picked <= 0).any()):
            raise ContractError("valid depths must be finite and > 0")


def project(point, K: Intrinsics, E: Extrinsics):
    """World point -> (u, v, depth). Raises BehindCameraError when z <= 0."""
    p = np.asarray(point, dtype=np.float64)
    cam = E.rotation @ p + E.translation
    z = cam[2]
    if z <= 0:
        raise BehindCameraError(f"point {p.tolist()} has camera-space z={z}")
    return (K.fx * cam[0] / z + K.cx, K.fy * cam[1] / z + K.cy, z)


def project_points(points: np.ndarray, K: Intrinsics, E: Extrinsics):
    """Vectorized projection; returns (uv (N,2), depth (N,)) without culling."""
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ E.rotation.T + E.translation
    z = cam[:, 2]
    uv = np.empty((len(pts), 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        uv[:, 0] = K.fx * cam[:, 0] / z + K.cx
        uv[:, 1] = K.fy * cam[:, 1] / z + K.cy
    return uv, z


def unproject(depth: DepthMap, K: Intrinsics, E: Extrinsics) -> np.ndarray:
    """World points for every valid pixel, row-major pixel order; (M,3)."""
    pts, _ = unproject_with_pixels(depth, K, E)
    return pts


def unproject_with_pixels(depth: DepthMap, K: Intrinsics, E: Extrinsics):
    """Like unproject, also returning the (row, col) index of each point."""
    if (depth.width, depth.height) != (K.width, K.height):
        raise ShapeError(
            f"depth map {depth.width}x{depth.height} does not match camera {K.width}x{K.height}")
    rows, cols = np.nonzero(depth.validity)
    d = depth.values[rows, cols]
    x = (cols - K.cx) * d / K.fx
    y = (rows - K.cy) * d / K.fy
    cam = np.stack([x, y, d], axis=1)
    world = (cam - E.translation) @ E.rotation
    return world, np.stack([rows, cols], axis=1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def camera_to_dict(K: Intrinsics, E: Extrinsics) -> dict:
    return {
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "width": K.width, "height": K.height,
        "rotation": E.rotation.ravel().tolist(),
        "translation": E.translation.tolist(),
        "convention": "w2c",
    }


def camera_from_dict(obj: dict):
    if obj.get("convention") != "w2c":
        raise DataError(f"camera convention must be 'w2c', got {obj.get('convention')!r}")
    K = Intrinsics(fx=obj["fx"], fy=obj["fy"], cx=obj["cx"], cy=obj["cy"],
                   width=int(obj["width"]), height=int(obj["height"]))
    E = Extrinsics(rotation=np.array(obj["rotation"], dtype=np.float64).reshape(3, 3),
                   translation=np.array(obj["translation"], dtype=np.float64))
    return K, E


def save_cameras(path, cams: list) -> None:
    Path(path).write_text(json.dumps([camera_to_dict(K, E) for K, E in cams], indent=1))


def load_cameras(path) -> list:
    path = Path(path)
    if not path.exists():
        raise DataError(f"camera file not found: {path}")
    return [camera_from_dict(o) for o in json.loads(path.read_text())]


DEPTH_MAGIC = b"WSDM"


def save_depth(path, depth: DepthMap) -> None:
    bits = np.packbits(depth.validity.ravel().astype(np.uint8))
    blob = b"".join([
        DEPTH_MAGIC,
        struct.pack("<II", depth.width, depth.height),
        depth.values.astype("<f8").tobytes(),
        bits.tobytes(),
    ])
    Path(path).write_bytes(blob)


def load_depth(path) -> DepthMap:
    path = Path(path)
    if not path.exists():
        raise DataError(f"depth file not found: {path}")
    buf = path.read_bytes()
    if buf[:4] != DEPTH_MAGIC:
        raise DataError(f"bad depth magic in {path}: {buf[:4]!r}")
    w, h = struct.unpack_from("<II", buf, 4)
    off = 12
    count = w * h
    values = np.frombuffer(buf[off:off + 8 * count], dtype="<f8").reshape(h, w)
    off += 8 * count
    nbytes = (count + 7) // 8
    bits = np.frombuffer(buf[off:off + nbytes], dtype=np.uint8)
    validity = np.unpackbits(bits)[:count].reshape(h, w).astype(bool)
    return DepthMap(width=w, height=h, values=values.copy(), validity=validity)
