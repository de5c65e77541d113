import numpy as np
import pytest

from splatkit.errors import ContractError, UndefinedMetricError
from splatkit.metrics import MetricReport, gaussian_window, psnr, ssim


def reference_ssim_loops(a, b, window=11, sigma=1.5):
    """Direct per-window implementation used as the oracle."""
    win = gaussian_window(window, sigma)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w, c = a.shape
    vals = []
    for ch in range(c):
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                pa = a[i:i + window, j:j + window, ch]
                pb = b[i:i + window, j:j + window, ch]
                mu_a = (win * pa).sum()
                mu_b = (win * pb).sum()
                var_a = (win * pa * pa).sum() - mu_a ** 2
                var_b = (win * pb * pb).sum() - mu_b ** 2
                cov = (win * pa * pb).sum() - mu_a * mu_b
                num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
                den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
                vals.append(num / den)
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_images_capped(self):
        img = np.random.default_rng(0).random((8, 8, 3))
        assert psnr(img, img.copy()) == 99.0

    def test_constant_half_difference(self):
        a = np.zeros((8, 8, 3))
        b = np.full((8, 8, 3), 0.5)
        assert psnr(a, b) == pytest.approx(10 * np.log10(1 / 0.25), abs=1e-12)

    def test_full_scale_difference(self):
        a = np.zeros((4, 4, 3))
        b = np.ones((4, 4, 3))
        assert psnr(a, b) == pytest.approx(0.0, abs=0)

    def test_masked(self):
        a = np.zeros((4, 4, 3))
        b = np.zeros((4, 4, 3))
        b[0, 0] = 1.0  # error only on a pixel the mask excludes
        m = np.ones((4, 4), dtype=bool)
        m[0, 0] = False
        assert psnr(a, b, mask=m) == 99.0

    def test_empty_mask_rejected(self):
        with pytest.raises(UndefinedMetricError):
            psnr(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), mask=np.zeros((4, 4), dtype=bool))

    def test_monotone_in_noise(self):
        rng = np.random.default_rng(1)
        base = rng.random((16, 16, 3)) * 0.5 + 0.25
        noise = rng.standard_normal((16, 16, 3))
        values = [psnr(base, np.clip(base + amp * noise, 0, 1))
                  for amp in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestSsim:
    def test_identical_is_one(self):
        img = np.random.default_rng(2).random((16, 16, 3))
        assert ssim(img, img.copy()) == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)

    def test_matches_window_oracle(self):
        # 32x32 gradient image against a +0.1 offset copy
        ys, xs = np.mgrid[0:32, 0:32]
        a = np.stack([(ys + xs) / 62.0] * 3, axis=2)
        b = np.clip(a + 0.1, 0, 1)
        assert ssim(a, b) == pytest.approx(reference_ssim_loops(a, b), abs=1e-10)

    def test_matches_oracle_random(self):
        rng = np.random.default_rng(4)
        a = rng.random((14, 15, 3))
        b = rng.random((14, 15, 3))
        assert ssim(a, b) == pytest.approx(reference_ssim_loops(a, b), abs=1e-10)

    def test_matches_skimage(self):
        from skimage.metrics import structural_similarity
        rng = np.random.default_rng(5)
        a = rng.random((24, 24, 3))
        b = np.clip(a + rng.standard_normal((24, 24, 3)) * 0.08, 0, 1)
        theirs = structural_similarity(a, b, channel_axis=2, gaussian_weights=True,
                                       sigma=1.5, use_sample_covariance=False,
                                       data_range=1.0)
        # skimage pads to full size; compare on interior-valid mode via crop
        # of our windowed mean versus their reported mean at modest tolerance
        assert ssim(a, b) == pytest.approx(theirs, abs=5e-3)

    def test_flip_invariance(self):
        rng = np.random.default_rng(6)
        a = rng.random((16, 16, 3))
        b = rng.random((16, 16, 3))
        assert ssim(a[:, ::-1], b[:, ::-1]) == pytest.approx(ssim(a, b), abs=1e-12)
        assert psnr(a[:, ::-1], b[:, ::-1]) == pytest.approx(psnr(a, b), abs=1e-12)

    def test_too_small_rejected(self):
        with pytest.raises(ContractError):
            ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_report_json():
    rep = MetricReport(psnr=31.5, ssim=0.91, n_pixels_evaluated=1024, mask_applied=True)
    loaded = MetricReport(**__import__("json").loads(rep.to_json()))
    assert loaded == rep
