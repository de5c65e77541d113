import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatkit.cameras import (DepthMap, Extrinsics, Intrinsics, load_cameras, load_depth,
                              project, project_points, save_cameras, save_depth, unproject,
                              unproject_with_pixels)
from splatkit.errors import BehindCameraError, ContractError, DataError, ShapeError


def random_pose(rng):
    # QR gives an orthonormal frame; flip to det +1
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return Extrinsics(rotation=q, translation=rng.standard_normal(3))


def test_identity_projection():
    K = Intrinsics(fx=1, fy=1, cx=0, cy=0, width=10, height=10)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    assert project((0, 0, 5), K, E) == (0.0, 0.0, 5.0)


def test_direct_formula():
    K = Intrinsics(fx=100, fy=100, cx=50, cy=50, width=100, height=100)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    u, v, d = project((1, 0, 2), K, E)
    assert u == pytest.approx(100.0, abs=0)
    assert d == 2.0


def test_behind_camera_raises():
    K = Intrinsics(fx=1, fy=1, cx=0, cy=0, width=4, height=4)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    with pytest.raises(BehindCameraError):
        project((0, 0, -1), K, E)


def test_non_orthonormal_rejected():
    with pytest.raises(ContractError):
        Extrinsics(rotation=np.eye(3) * 1.001, translation=np.zeros(3))


def test_reflection_rejected():
    r = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ContractError):
        Extrinsics(rotation=r, translation=np.zeros(3))


def test_unproject_center_pixel():
    K = Intrinsics(fx=10, fy=10, cx=2, cy=2, width=5, height=5)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    validity = np.zeros((5, 5), dtype=bool)
    validity[2, 2] = True
    values = np.where(validity, 5.0, 1.0)
    pts = unproject(DepthMap(width=5, height=5, values=values, validity=validity), K, E)
    np.testing.assert_allclose(pts, [[0.0, 0.0, 5.0]], atol=1e-12)


def test_unproject_all_invalid_is_empty():
    K = Intrinsics(fx=10, fy=10, cx=2, cy=2, width=5, height=5)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    dm = DepthMap(width=5, height=5, values=np.ones((5, 5)), validity=np.zeros((5, 5), dtype=bool))
    assert unproject(dm, K, E).shape == (0, 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_project_unproject_round_trip(seed):
    rng = np.random.default_rng(seed)
    K = Intrinsics(fx=rng.uniform(20, 200), fy=rng.uniform(20, 200),
                   cx=rng.uniform(0, 16), cy=rng.uniform(0, 16), width=16, height=16)
    E = random_pose(rng)
    validity = rng.random((16, 16)) > 0.4
    values = np.where(validity, rng.uniform(0.5, 10.0, (16, 16)), 1.0)
    dm = DepthMap(width=16, height=16, values=values, validity=validity)
    pts, pix = unproject_with_pixels(dm, K, E)
    for p, (row, col) in zip(pts, pix):
        u, v, d = project(p, K, E)
        assert abs(u - col) < 1e-9
        assert abs(v - row) < 1e-9
        assert abs(d - values[row, col]) < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_rigid_transform_invariance(seed):
    rng = np.random.default_rng(seed)
    K = Intrinsics(fx=80, fy=90, cx=8, cy=8, width=16, height=16)
    E = random_pose(rng)
    pts = rng.standard_normal((20, 3)) + E.camera_center() + E.rotation.T @ np.array([0, 0, 5.0])

    t_rot = random_pose(rng).rotation
    t_tr = rng.standard_normal(3)
    # world' = T(world); camera tracks along: R' = R T_r^T, t' = t - R T_r^T t_t
    pts2 = pts @ t_rot.T + t_tr
    E2 = Extrinsics(rotation=E.rotation @ t_rot.T,
                    translation=E.translation - E.rotation @ t_rot.T @ t_tr)
    uv1, z1 = project_points(pts, K, E)
    uv2, z2 = project_points(pts2, K, E2)
    np.testing.assert_allclose(uv1, uv2, atol=1e-9)
    np.testing.assert_allclose(z1, z2, atol=1e-9)


def test_depth_validation():
    with pytest.raises(ContractError):
        DepthMap(width=2, height=2, values=np.array([[1.0, -1.0], [1.0, 1.0]]),
                 validity=np.ones((2, 2), dtype=bool))


def test_camera_json_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    K = Intrinsics(fx=55.5, fy=66.25, cx=24.0, cy=23.5, width=48, height=48)
    E = random_pose(rng)
    path = tmp_path / "cameras.json"
    save_cameras(path, [(K, E)])
    (K2, E2), = load_cameras(path)
    assert K2 == K
    np.testing.assert_array_equal(E2.rotation, E.rotation)
    np.testing.assert_array_equal(E2.translation, E.translation)


def test_camera_json_rejects_wrong_convention(tmp_path):
    path = tmp_path / "cameras.json"
    save_cameras(path, [(Intrinsics(fx=1, fy=1, cx=0, cy=0, width=2, height=2),
                         Extrinsics(rotation=np.eye(3), translation=np.zeros(3)))])
    text = path.read_text().replace("w2c", "c2w")
    path.write_text(text)
    with pytest.raises(DataError):
        load_cameras(path)


def test_depth_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    validity = rng.random((7, 9)) > 0.5
    values = np.where(validity, rng.uniform(0.1, 4.0, (7, 9)), 0.0)
    values[~validity] = 1.0
    dm = DepthMap(width=9, height=7, values=values, validity=validity)
    path = tmp_path / "d.wsdm"
    save_depth(path, dm)
    dm2 = load_depth(path)
    assert (dm2.width, dm2.height) == (9, 7)
    np.testing.assert_array_equal(dm2.values, dm.values)
    np.testing.assert_array_equal(dm2.validity, dm.validity)


def test_depth_size_mismatch_rejected():
    K = Intrinsics(fx=10, fy=10, cx=2, cy=2, width=6, height=5)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    dm = DepthMap(width=5, height=5, values=np.ones((5, 5)),
                  validity=np.ones((5, 5), dtype=bool))
    with pytest.raises(ShapeError):
        unproject(dm, K, E)
