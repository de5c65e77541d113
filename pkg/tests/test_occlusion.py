import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatkit import autodiff as ad
from splatkit.errors import ContractError
from splatkit.imgio import save_png
from splatkit.occlusion import (TransientMask, builtin_bank, composite_occluders, load_bank,
                                load_mask, masked_loss, save_mask)


class TestMaskIO:
    def test_all_white_png(self, tmp_path):
        path = tmp_path / "m.png"
        save_png(path, np.ones((6, 8)))
        mask = load_mask(path)
        assert mask.S.all()
        assert (mask.width, mask.height) == (8, 6)

    def test_all_black_png(self, tmp_path):
        path = tmp_path / "m.png"
        save_png(path, np.zeros((6, 8)))
        mask = load_mask(path)
        assert not mask.S.any()
        assert mask.visibility.all()

    def test_checkerboard_popcount(self, tmp_path):
        path = tmp_path / "m.png"
        board = np.indices((8, 8)).sum(axis=0) % 2
        save_png(path, board.astype(np.float64))
        mask = load_mask(path)
        assert int(mask.S.sum()) == 32

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        s = (rng.random((10, 12)) > 0.5).astype(np.uint8)
        mask = TransientMask(width=12, height=10, S=s)
        path = tmp_path / "m.png"
        save_mask(path, mask)
        np.testing.assert_array_equal(load_mask(path).S, s)

    def test_pairing_size_check(self):
        mask = TransientMask(width=4, height=4, S=np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ContractError):
            mask.check_pair(np.zeros((5, 4, 3)))


class TestBank:
    def test_builtin_has_12_sprites(self):
        bank = builtin_bank()
        assert len(bank) == 12
        for sprite in bank:
            alpha = sprite.rgba[:, :, 3]
            assert set(np.unique(alpha)) <= {0.0, 1.0}  # hard edges

    def test_builtin_deterministic(self):
        b1 = builtin_bank()
        b2 = builtin_bank()
        for s1, s2 in zip(b1, b2):
            np.testing.assert_array_equal(s1.rgba, s2.rgba)

    def test_load_bank_lexicographic(self, tmp_path):
        rng = np.random.default_rng(1)
        for name in ["b.png", "a.png", "c.png"]:
            rgba = np.zeros((8, 8, 4))
            rgba[2:6, 2:6, 3] = 1.0
            rgba[2:6, 2:6, :3] = rng.random(3)
            from PIL import Image
            Image.fromarray((rgba * 255).astype(np.uint8), mode="RGBA").save(tmp_path / name)
        bank = load_bank(tmp_path)
        assert [s.label for s in bank] == ["a", "b", "c"]


class TestComposite:
    def test_deterministic_for_seed(self):
        rng = np.random.default_rng(2)
        img = rng.random((32, 32, 3))
        bank = builtin_bank()
        out1, m1 = composite_occluders(img, bank, rng_seed=77)
        out2, m2 = composite_occluders(img, bank, rng_seed=77)
        np.testing.assert_array_equal(out1, out2)
        np.testing.assert_array_equal(m1.S, m2.S)

    def test_different_seeds_differ(self):
        img = np.zeros((32, 32, 3))
        bank = builtin_bank()
        out1, _ = composite_occluders(img, bank, rng_seed=1)
        out2, _ = composite_occluders(img, bank, rng_seed=2)
        assert not np.array_equal(out1, out2)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1))
    def test_lower_half_and_mask_matches_changes(self, seed):
        img = np.full((40, 36, 3), 0.5)
        bank = builtin_bank()
        out, mask = composite_occluders(img, bank, rng_seed=seed)
        rows = np.nonzero(mask.S.any(axis=1))[0]
        if len(rows):
            assert rows.min() >= 20  # lower half only
        # binary-alpha sprites: mask is exactly the altered pixel set
        changed = np.any(out != img, axis=2)
        np.testing.assert_array_equal(mask.S.astype(bool), changed)

    def test_empty_bank_rejected(self):
        with pytest.raises(ContractError):
            composite_occluders(np.zeros((8, 8, 3)), [], rng_seed=0)


class TestMaskedLoss:
    def test_zero_when_equal_and_unmasked(self):
        rng = np.random.default_rng(3)
        img = rng.random((8, 8, 3))
        loss = masked_loss(img, img.copy(), np.ones((8, 8)), lam=0.0)
        assert float(ad.value_of(loss)) == 0.0

    def test_zero_when_fully_masked(self):
        rng = np.random.default_rng(4)
        a = rng.random((8, 8, 3))
        b = rng.random((8, 8, 3))
        loss = masked_loss(a, b, np.zeros((8, 8)), lam=0.05)
        assert float(ad.value_of(loss)) == 0.0

    def test_half_mask_closed_form(self):
        # target 0, render 1 everywhere, left half visible: squared error 1
        # on half the entries, averaged over all entries -> 0.5
        h, w = 6, 8
        target = np.zeros((h, w, 3))
        render = np.ones((h, w, 3))
        m = np.zeros((h, w))
        m[:, : w // 2] = 1.0
        loss = masked_loss(target, render, m, lam=0.0)
        assert float(ad.value_of(loss)) == pytest.approx(0.5, abs=0)

    def test_zero_when_equal_on_support(self):
        rng = np.random.default_rng(5)
        target = rng.random((8, 8, 3))
        render = target.copy()
        m = (rng.random((8, 8)) > 0.5).astype(float)
        render[m == 0] = rng.random(3)  # corrupt only masked pixels
        loss = masked_loss(target, render, m, lam=0.05)
        assert float(ad.value_of(loss)) == 0.0

    def test_monotone_in_coverage(self):
        rng = np.random.default_rng(6)
        target = rng.random((8, 8, 3))
        render = rng.random((8, 8, 3))
        m_full = np.ones((8, 8))
        m_less = m_full.copy()
        m_less[4:, :] = 0.0
        full = float(ad.value_of(masked_loss(target, render, m_full, lam=0.0)))
        less = float(ad.value_of(masked_loss(target, render, m_less, lam=0.0)))
        assert less <= full

    def test_gradient_vanishes_on_masked_pixels(self):
        rng = np.random.default_rng(7)
        target = rng.random((8, 8, 3))
        render = ad.leaf(rng.random((8, 8, 3)))
        m = (rng.random((8, 8)) > 0.4).astype(float)
        loss = masked_loss(target, render, m, lam=0.05)
        ad.backward(loss)
        masked_px = m == 0
        assert np.array_equal(render.grad[masked_px], np.zeros_like(render.grad[masked_px]))
        # and at least one visible pixel carries gradient
        assert np.abs(render.grad[~masked_px]).max() > 0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(8)
        target = rng.random((8, 8, 3))
        start = rng.random((8, 8, 3))
        m = (rng.random((8, 8)) > 0.3).astype(float)

        def f(leaves):
            return masked_loss(target, leaves[0], m, lam=0.05)

        assert ad.grad_check(f, [start], h=1e-6, tol=1e-6)["passed"]

    def test_visible_normalization(self):
        target = np.zeros((4, 4, 3))
        render = np.ones((4, 4, 3))
        m = np.zeros((4, 4))
        m[0, 0] = 1.0
        all_norm = float(ad.value_of(masked_loss(target, render, m, lam=0.0)))
        vis_norm = float(ad.value_of(masked_loss(target, render, m, lam=0.0,
                                                 normalize="visible")))
        assert all_norm == pytest.approx(1.0 / 16.0, abs=0)
        assert vis_norm == pytest.approx(1.0, abs=0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractError):
            masked_loss(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)), np.ones((4, 4)), 0.0)
        with pytest.raises(ContractError):
            masked_loss(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.ones((5, 4)), 0.0)
        with pytest.raises(ContractError):
            masked_loss(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.ones((4, 4)), -0.1)
