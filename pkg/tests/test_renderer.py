import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatkit import autodiff as ad
from splatkit import sh as shmod
from splatkit.cameras import Extrinsics, Intrinsics
from splatkit.errors import ContractError, NumericError
from splatkit.renderer import (RasterConfig, project_gaussian, rasterize, rasterize_backward,
                               rasterize_node, rasterize_reference, render_depth)
from splatkit.scene import Gaussian, GaussianScene, logit, sigmoid


def front_camera(size=16, f=20.0):
    K = Intrinsics(fx=f, fy=f, cx=(size - 1) / 2, cy=(size - 1) / 2, width=size, height=size)
    E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
    return K, E


def random_scene(rng, n, spread=1.2, z_range=(3.0, 6.0), opacity=(-1.0, 2.5)):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    pos = np.column_stack([
        rng.uniform(-spread, spread, n),
        rng.uniform(-spread, spread, n),
        rng.uniform(*z_range, n),
    ])
    return GaussianScene(
        positions=pos,
        opacity_logits=rng.uniform(*opacity, n),
        rotations=q,
        log_scales=rng.uniform(-2.5, -0.8, (n, 3)),
        sh=rng.standard_normal((n, 75)) * 0.15,
    )


def on_axis_gaussian(sigma=0.5, z=4.0, opacity_logit=1.0, color_rgb=(0.8, 0.3, 0.6)):
    sh = shmod.dc_from_rgb(np.array([color_rgb]))[0]
    return Gaussian(position=np.array([0.0, 0.0, z]), opacity_logit=opacity_logit,
                    rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                    log_scale=np.full(3, np.log(sigma)), sh=sh)


class TestProjection:
    def test_on_axis_isotropic_cov(self):
        # numeric-Jacobian oracle for the isotropic on-axis case has the
        # closed form ((fx*sigma/z)^2 + floor) * I
        K, E = front_camera(size=17, f=30.0)
        sigma, z = 0.4, 5.0
        g = on_axis_gaussian(sigma=sigma, z=z)
        # move to the optical axis of this camera (principal point at center)
        splat = project_gaussian(g, K, E)
        expected = (K.fx * sigma / z) ** 2 + 0.3
        np.testing.assert_allclose(splat.cov2d, expected * np.eye(2), atol=1e-9)
        assert splat.depth == z

    def test_behind_camera_culled(self):
        K, E = front_camera()
        g = on_axis_gaussian(z=-2.0)
        assert project_gaussian(g, K, E) is None

    def test_far_outside_image_culled(self):
        K, E = front_camera(size=8, f=50.0)
        g = Gaussian(position=np.array([100.0, 0.0, 2.0]), opacity_logit=1.0,
                     rotation=np.array([1.0, 0, 0, 0]), log_scale=np.full(3, -3.0),
                     sh=np.zeros(75))
        assert project_gaussian(g, K, E) is None

    def test_doubling_depth_halves_footprint(self):
        K, E = front_camera(size=33, f=60.0)
        near_splat = project_gaussian(on_axis_gaussian(sigma=0.3, z=3.0), K, E)
        far_splat = project_gaussian(on_axis_gaussian(sigma=0.3, z=6.0), K, E)
        std_near = np.sqrt(near_splat.cov2d[0, 0] - 0.3)
        std_far = np.sqrt(far_splat.cov2d[0, 0] - 0.3)
        assert std_near / std_far == pytest.approx(2.0, rel=1e-9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_cov2d_matches_numeric_jacobian(self, seed):
        rng = np.random.default_rng(seed)
        K = Intrinsics(fx=rng.uniform(20, 90), fy=rng.uniform(20, 90),
                       cx=7.5, cy=7.5, width=16, height=16)
        # random orthonormal camera looking at the splat
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        if np.linalg.det(q) < 0:
            q[:, 0] *= -1
        target = rng.uniform(-0.5, 0.5, 3)
        E = Extrinsics(rotation=q, translation=-q @ (target + q.T @ np.array([0, 0, -5.0])))
        quat = rng.standard_normal(4)
        quat /= np.linalg.norm(quat)
        g = Gaussian(position=target, opacity_logit=0.5, rotation=quat,
                     log_scale=rng.uniform(-2.0, -0.5, 3), sh=np.zeros(75))
        splat = project_gaussian(g, K, E)
        assert splat is not None

        def mean2d(p):
            cam = E.rotation @ p + E.translation
            return np.array([K.fx * cam[0] / cam[2] + K.cx, K.fy * cam[1] / cam[2] + K.cy])

        h = 1e-6
        J = np.zeros((2, 3))
        for axis in range(3):
            dp = np.zeros(3)
            dp[axis] = h
            J[:, axis] = (mean2d(g.position + dp) - mean2d(g.position - dp)) / (2 * h)
        from splatkit.scene import covariance
        oracle = J @ covariance(g) @ J.T + 0.3 * np.eye(2)
        np.testing.assert_allclose(splat.cov2d, oracle, atol=1e-9)


class TestRasterizeForward:
    def test_empty_scene_background(self):
        K, E = front_camera(8)
        out = rasterize(GaussianScene.empty(), K, E, background=(0.1, 0.2, 0.3))
        assert np.array_equal(out.image, np.broadcast_to([0.1, 0.2, 0.3], (8, 8, 3)))
        assert np.array_equal(out.alpha, np.zeros((8, 8)))

    def test_single_gaussian_center_pixel_closed_form(self):
        size = 17
        K, E = front_camera(size, f=25.0)
        g = on_axis_gaussian(sigma=0.5, z=4.0, opacity_logit=0.8)
        scene = GaussianScene.from_gaussians([g])
        bg = np.array([0.05, 0.1, 0.15])
        out = rasterize(scene, K, E, background=bg)
        center = (size - 1) // 2
        # at the exact center d = 0 so alpha = opacity
        a = sigmoid(0.8)
        color = np.clip(shmod.sh_eval(g.sh, np.array([0.0, 0.0, 1.0])), 0, 1)
        expected = color * a + bg * (1 - a)
        np.testing.assert_allclose(out.image[center, center], expected, atol=1e-12)
        assert out.alpha[center, center] == pytest.approx(a, abs=1e-12)

    def test_all_zero_opacity_gives_background(self):
        rng = np.random.default_rng(0)
        K, E = front_camera(12)
        scene = random_scene(rng, 10)
        scene.opacity_logits[:] = -200.0  # sigmoid underflows to exactly 0
        bg = (0.3, 0.5, 0.7)
        out = rasterize(scene, K, E, background=bg)
        assert np.array_equal(out.image, np.broadcast_to(bg, (12, 12, 3)))

    def test_permutation_invariance_bit_identical(self):
        rng = np.random.default_rng(42)
        K, E = front_camera(16)
        scene = random_scene(rng, 20)
        out1 = rasterize(scene, K, E, background=(0.2, 0.2, 0.2))
        perm = rng.permutation(20)
        scene2 = GaussianScene(positions=scene.positions[perm],
                               opacity_logits=scene.opacity_logits[perm],
                               rotations=scene.rotations[perm],
                               log_scales=scene.log_scales[perm],
                               sh=scene.sh[perm])
        out2 = rasterize(scene2, K, E, background=(0.2, 0.2, 0.2))
        assert np.array_equal(out1.image, out2.image)
        assert np.array_equal(out1.alpha, out2.alpha)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.integers(min_value=1, max_value=64))
    def test_tiled_matches_naive_bit_identical(self, seed, n):
        rng = np.random.default_rng(seed)
        K, E = front_camera(16)
        scene = random_scene(rng, n)
        bg = rng.random(3)
        tiled = rasterize(scene, K, E, background=bg)
        naive = rasterize_reference(scene, K, E, background=bg)
        assert np.array_equal(tiled.image, naive.image)
        assert np.array_equal(tiled.alpha, naive.alpha)

    def test_tiled_matches_naive_on_non_square_multi_tile(self):
        rng = np.random.default_rng(7)
        scene = random_scene(rng, 40)
        K = Intrinsics(fx=30.0, fy=28.0, cx=15.0, cy=23.0, width=33, height=48)
        E = Extrinsics(rotation=np.eye(3), translation=np.zeros(3))
        tiled = rasterize(scene, K, E, background=(0.1, 0.0, 0.9))
        naive = rasterize_reference(scene, K, E, background=(0.1, 0.0, 0.9))
        assert np.array_equal(tiled.image, naive.image)

    def test_alpha_monotone_in_opacity(self):
        rng = np.random.default_rng(5)
        K, E = front_camera(16)
        scene = random_scene(rng, 8)
        out1 = rasterize(scene, K, E)
        bumped = GaussianScene(positions=scene.positions,
                               opacity_logits=scene.opacity_logits + 0.7,
                               rotations=scene.rotations, log_scales=scene.log_scales,
                               sh=scene.sh)
        out2 = rasterize(bumped, K, E)
        assert (out2.alpha >= out1.alpha - 1e-15).all()

    def test_non_finite_rejected_with_index(self):
        rng = np.random.default_rng(1)
        K, E = front_camera(8)
        scene = random_scene(rng, 5)
        scene.positions[3, 1] = np.nan
        with pytest.raises(NumericError, match="gaussian 3"):
            rasterize(scene, K, E)

    def test_colors_override_used(self):
        K, E = front_camera(9, f=12.0)
        g = on_axis_gaussian(sigma=0.8, z=4.0, opacity_logit=5.0)
        scene = GaussianScene.from_gaussians([g])
        out = rasterize(scene, K, E, colors_override=np.array([[1.0, 0.0, 0.0]]))
        center = 4
        assert out.image[center, center, 0] > 0.9
        assert out.image[center, center, 1] < 0.05


class TestRasterizeBackward:
    def test_missing_contrib_rejected(self):
        with pytest.raises(ContractError):
            rasterize_backward(np.zeros((4, 4, 3)), None)

    def test_mean_intensity_single_gaussian_closed_form(self):
        size = 9
        K, E = front_camera(size, f=10.0)
        # tiny covariance floor keeps the 3-sigma box inside one pixel, so
        # "covers one pixel" is exact and the closed form applies
        cfg = RasterConfig(cov_floor=1e-8)
        g = on_axis_gaussian(sigma=0.05, z=4.0, opacity_logit=0.3)
        scene = GaussianScene.from_gaussians([g])
        out = rasterize(scene, K, E, retain_contrib=True, cfg=cfg)
        grad_img = np.full((size, size, 3), 1.0 / (size * size * 3))
        dcol, dlog = rasterize_backward(grad_img, out.per_pixel_contrib)
        a = sigmoid(0.3)
        t = 1.0
        np.testing.assert_allclose(dcol[0], a * t / (size * size * 3) * np.ones(3), rtol=1e-9)

    def test_fully_occluded_zero_gradient(self):
        # the 0.999 alpha clip means one wall leaks 0.1%; stacking walls
        # drives transmittance to an exact float zero behind them
        K, E = front_camera(9, f=10.0)
        walls = [on_axis_gaussian(sigma=500.0, z=2.0 + 0.001 * i, opacity_logit=200.0)
                 for i in range(150)]
        back_g = on_axis_gaussian(sigma=2.0, z=6.0, opacity_logit=1.0)
        scene = GaussianScene.from_gaussians(walls + [back_g])
        out = rasterize(scene, K, E, retain_contrib=True)
        dcol, dlog = rasterize_backward(np.ones((9, 9, 3)), out.per_pixel_contrib)
        assert np.array_equal(dcol[150], np.zeros(3))
        assert dlog[150] == 0.0

    def test_occluded_gradient_attenuated_by_transmittance(self):
        # single clipped wall: occluded gradient is exactly 0.001x the
        # unoccluded one at every covered pixel
        K, E = front_camera(9, f=10.0)
        wall = on_axis_gaussian(sigma=500.0, z=2.0, opacity_logit=200.0)
        back_g = on_axis_gaussian(sigma=2.0, z=6.0, opacity_logit=1.0)
        occluded = GaussianScene.from_gaussians([wall, back_g])
        alone = GaussianScene.from_gaussians([back_g])
        out_occ = rasterize(occluded, K, E, retain_contrib=True)
        out_alone = rasterize(alone, K, E, retain_contrib=True)
        dcol_occ, _ = rasterize_backward(np.ones((9, 9, 3)), out_occ.per_pixel_contrib)
        dcol_alone, _ = rasterize_backward(np.ones((9, 9, 3)), out_alone.per_pixel_contrib)
        np.testing.assert_allclose(dcol_occ[1], 0.001 * dcol_alone[0], rtol=1e-9)

    def test_no_contribution_zero_gradient(self):
        rng = np.random.default_rng(3)
        K, E = front_camera(8)
        scene = random_scene(rng, 4)
        scene.positions[2] = [50.0, 50.0, 4.0]  # culled entirely
        out = rasterize(scene, K, E, retain_contrib=True)
        dcol, dlog = rasterize_backward(np.ones((8, 8, 3)), out.per_pixel_contrib)
        assert np.array_equal(dcol[2], np.zeros(3))
        assert dlog[2] == 0.0

    @settings(max_examples=8, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_gradients_match_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        size = 8
        K, E = front_camera(size, f=9.0)
        scene = random_scene(rng, 5, spread=1.0, opacity=(-0.5, 1.5))
        colors0 = rng.uniform(0.15, 0.85, (5, 3))
        logits0 = scene.opacity_logits.copy()
        bg = rng.random(3)
        weights = rng.standard_normal((size, size, 3))

        def f(leaves):
            col, lgt = leaves
            img, _ = rasterize_node(scene, K, E, col, lgt, background=bg)
            return ad.total(ad.mul(img, weights))

        report = ad.grad_check(f, [colors0, logits0], h=1e-6, tol=1e-5)
        assert report["passed"], report


class TestRenderDepth:
    def test_first_hit_depth(self):
        K, E = front_camera(9, f=10.0)
        near_g = on_axis_gaussian(sigma=1.0, z=3.0, opacity_logit=logit(0.95))
        far_g = on_axis_gaussian(sigma=1.0, z=6.0, opacity_logit=logit(0.95))
        scene = GaussianScene.from_gaussians([far_g, near_g])
        dm = render_depth(scene, K, E, alpha_threshold=0.5)
        center = 4
        assert dm.validity[center, center]
        assert dm.values[center, center] == 3.0

    def test_miss_is_invalid(self):
        K, E = front_camera(9, f=10.0)
        g = on_axis_gaussian(sigma=0.01, z=3.0, opacity_logit=logit(0.9))
        dm = render_depth(GaussianScene.from_gaussians([g]), K, E)
        assert not dm.validity[0, 0]
