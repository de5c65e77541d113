"""Binary little-endian PLY export/import for Gaussian scenes.

Vertex schema follows the de-facto splatting layout: x y z, f_dc_*,
f_rest_* (channel-major), opacity (logit), scale_* (logs), rot_* (quat
w,x,y,z). Degree-4 files use double precision and round-trip bit-exactly;
degree-3 files truncate to 16 coefficients per channel and use float32 so
third-party viewers open them. The header carries "comment sh_degree=<n>".
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import sh as shmod
from .errors import ContractError, PlyParseError
from .scene import GaussianScene

_REST = {4: shmod.N_COEFFS - 1, 3: 15}
_DTYPE = {4: "<f8", 3: "<f4"}
_PLY_TYPE = {4: "double", 3: "float"}


def _property_names(degree: int) -> list[str]:
    rest = _REST[degree]
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def write_ply(scene: GaussianScene, path, compat_degree: int = 4) -> None:
    if compat_degree not in (3, 4):
        raise ContractError(f"compat_degree must be 3 or 4, got {compat_degree}")
    rest = _REST[compat_degree]
    names = _property_names(compat_degree)
    n = len(scene)

    header = "\n".join(
        ["ply", "format binary_little_endian 1.0",
         f"comment sh_degree={compat_degree}",
         f"comment scene_id={scene.scene_id}",
         f"element vertex {n}"]
        + [f"property {_PLY_TYPE[compat_degree]} {p}" for p in names]
        + ["end_header", ""])

    data = np.empty((n, len(names)), dtype=np.float64)
    data[:, 0:3] = scene.positions
    sh3 = scene.sh.reshape(n, 3, shmod.N_COEFFS) if n else scene.sh.reshape(0, 3, shmod.N_COEFFS)
    data[:, 3:6] = sh3[:, :, 0]
    data[:, 6:6 + 3 * rest] = sh3[:, :, 1:1 + rest].reshape(n, 3 * rest)
    base = 6 + 3 * rest
    data[:, base] = scene.opacity_logits
    data[:, base + 1:base + 4] = scene.log_scales
    data[:, base + 4:base + 8] = scene.rotations

    Path(path).write_bytes(header.encode("ascii") + data.astype(_DTYPE[compat_degree]).tobytes())


def read_ply(path) -> GaussianScene:
    buf = Path(path).read_bytes()
    if not buf.startswith(b"ply\n"):
        raise PlyParseError("missing 'ply' magic line", 0)

    # header is ascii lines up to end_header
    end = buf.find(b"end_header\n")
    if end < 0:
        raise PlyParseError("no end_header line", len(buf))
    body_off = end + len(b"end_header\n")
    lines = buf[:end].decode("ascii", errors="replace").split("\n")

    degree = None
    scene_id = ""
    count = None
    props: list[tuple[str, str]] = []
    offset = 0
    for line in lines:
        if line == "ply":
            pass
        elif line.startswith("format "):
            if line != "format binary_little_endian 1.0":
                raise PlyParseError(f"unsupported format line: {line!r}", offset)
        elif line.startswith("comment sh_degree="):
            degree = int(line.split("=", 1)[1])
        elif line.startswith("comment scene_id="):
            scene_id = line.split("=", 1)[1]
        elif line.startswith("comment"):
            pass
        elif line.startswith("element vertex "):
            count = int(line.split()[-1])
        elif line.startswith("element "):
            raise PlyParseError(f"unexpected element: {line!r}", offset)
        elif line.startswith("property "):
            parts = line.split()
            if len(parts) != 3:
                raise PlyParseError(f"malformed property line: {line!r}", offset)
            props.append((parts[1], parts[2]))
        elif line.strip():
            raise PlyParseError(f"unrecognized header line: {line!r}", offset)
        offset += len(line) + 1

    if degree not in (3, 4):
        raise PlyParseError(f"header lacks a valid sh_degree comment (got {degree})", 0)
    if count is None:
        raise PlyParseError("header lacks an element vertex line", 0)
    expected = _property_names(degree)
    got = [p[1] for p in props]
    if got != expected:
        raise PlyParseError(
            f"property list mismatch for degree {degree}: got {len(got)} properties", body_off)
    want_type = _PLY_TYPE[degree]
    bad = [p for p in props if p[0] != want_type]
    if bad:
        raise PlyParseError(f"expected {want_type} properties, found {bad[0][0]}", body_off)

    itemsize = 8 if degree == 4 else 4
    need = count * len(expected) * itemsize
    if len(buf) - body_off != need:
        raise PlyParseError(
            f"body has {len(buf) - body_off} bytes, expected {need} for {count} vertices", body_off)

    data = np.frombuffer(buf, dtype=_DTYPE[degree], count=count * len(expected),
                         offset=body_off).reshape(count, len(expected))
    if degree == 3:
        data = data.astype(np.float64)
    # degree 4 stays a zero-copy float64 view; every consumer below copies

    rest = _REST[degree]
    if degree == 4:
        sh = np.empty((count, 3, shmod.N_COEFFS))
    else:
        sh = np.zeros((count, 3, shmod.N_COEFFS))
    sh[:, :, 0] = data[:, 3:6]
    # strided (count, 3, rest) view over the contiguous per-row rest block
    # avoids materializing a reshape copy of the whole block
    rest_view = np.lib.stride_tricks.as_strided(
        data[:, 6:], shape=(count, 3, rest),
        strides=(data.strides[0], rest * data.strides[1], data.strides[1]))
    sh[:, :, 1:1 + rest] = rest_view
    base = 6 + 3 * rest

    rotations = data[:, base + 4:base + 8].copy()
    if count:
        norms = np.linalg.norm(rotations, axis=1)
        off_unit = np.abs(norms - 1.0) > 1e-9
        if off_unit.any():
            if (np.abs(norms - 1.0) > 1e-3).any():
                raise PlyParseError("quaternion norms deviate from 1 by more than 1e-3", body_off)
            rotations[off_unit] /= norms[off_unit, None]

    return GaussianScene(positions=data[:, 0:3], opacity_logits=data[:, base],
                         rotations=rotations, log_scales=data[:, base + 1:base + 4],
                         sh=sh.reshape(count, shmod.N_SH), scene_id=scene_id)
