"""Objective and metric oracles: closed forms, recomposition, optimizer."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cwtnet import autodiff as ad
from cwtnet.errors import ConfigurationError, ShapeError
from cwtnet.gradcheck import check_gradients
from cwtnet.losses import (
    LossWeights,
    composite_loss,
    l1_loss,
    mse_loss,
    psnr,
    recompose,
    ssim,
    ssim_loss,
)
from cwtnet.optim import Adam
from cwtnet.verify import check_ssim_loss


class TestL1:
    def test_identical_zero(self):
        rng = ad.make_rng(0)
        x = rng.random((1, 3, 4, 4)).astype(np.float32)
        assert l1_loss(x, x.copy()).item() == 0.0

    def test_constant_offset(self):
        rng = ad.make_rng(1)
        x = rng.random((2, 3, 5, 5)).astype(np.float32)
        assert l1_loss(x, x + 0.5).item() == pytest.approx(0.5, abs=1e-6)

    def test_matches_double_loop_oracle(self):
        rng = ad.make_rng(2)
        a = rng.random((2, 2, 3, 3)).astype(np.float32)
        b = rng.random((2, 2, 3, 3)).astype(np.float32)
        total = 0.0
        for idx in np.ndindex(a.shape):
            total += abs(float(a[idx]) - float(b[idx]))
        assert l1_loss(a, b).item() == pytest.approx(total / a.size, abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 5)))


class TestSSIM:
    def test_self_similarity_is_one(self):
        rng = ad.make_rng(3)
        x = rng.random((1, 3, 13, 13)).astype(np.float32)
        assert abs(ssim(x, x.copy()).item() - 1.0) < 1e-7
        assert abs(ssim_loss(x, x.copy()).item()) < 1e-7

    def test_constant_patch_closed_form(self):
        a = np.full((1, 1, 13, 13), 0.5, dtype=np.float32)
        b = np.full((1, 1, 13, 13), 0.6, dtype=np.float32)
        # luminance term only: (2*0.5*0.6 + 1e-4) / (0.25 + 0.36 + 1e-4)
        expected = (2 * 0.5 * 0.6 + 1e-4) / (0.5 ** 2 + 0.6 ** 2 + 1e-4)
        assert ssim(a, b).item() == pytest.approx(expected, abs=1e-3)

    def test_loss_bounds_on_inverted_checkerboard(self):
        i, j = np.mgrid[0:12, 0:12]
        x = ((i + j) % 2).astype(np.float32)[None, None]
        loss = ssim_loss(x, 1.0 - x).item()
        assert 0.0 <= loss <= 2.0
        assert loss > 1.0  # anti-correlated structure drives SSIM negative

    def test_symmetry(self):
        rng = ad.make_rng(4)
        a = rng.random((1, 2, 12, 12)).astype(np.float32)
        b = rng.random((1, 2, 12, 12)).astype(np.float32)
        assert abs(ssim(a, b).item() - ssim(b, a).item()) < 1e-7

    def test_window_size_guard(self):
        small = np.zeros((1, 1, 8, 8), dtype=np.float32)
        with pytest.raises(ConfigurationError):
            ssim(small, small)

    def test_gradient(self):
        rep = check_ssim_loss(n_samples=200)
        assert rep.passed(), rep.summary()


class TestPSNR:
    def test_uniform_difference_closed_form(self):
        a = np.zeros((1, 1, 8, 8), dtype=np.float64)
        b = np.full((1, 1, 8, 8), 0.1, dtype=np.float64)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-4)

    def test_identical_infinity_sentinel(self):
        x = np.full((1, 3, 4, 4), 0.3, dtype=np.float32)
        assert math.isinf(psnr(x, x.copy()))

    def test_symmetry(self):
        rng = ad.make_rng(5)
        a = rng.random((1, 3, 6, 6)).astype(np.float32)
        b = rng.random((1, 3, 6, 6)).astype(np.float32)
        assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-9)

    @given(st.floats(0.01, 0.4), st.floats(0.01, 0.4))
    @settings(max_examples=25, deadline=None)
    def test_strictly_decreasing_in_mse(self, d1, d2):
        a = np.zeros((1, 1, 4, 4))
        p1 = psnr(a, a + d1)
        p2 = psnr(a, a + d2)
        if d1 < d2:
            assert p1 > p2
        elif d1 > d2:
            assert p1 < p2


class TestCompositeLoss:
    def _instance(self, seed=6, size=13):
        rng = ad.make_rng(seed)
        i_hr = ad.Tensor(rng.random((1, 3, size, size)).astype(np.float32))
        i_gt = rng.random((1, 3, size, size)).astype(np.float32)
        i_wt = ad.Tensor(rng.standard_normal((1, 3, size, size)).astype(np.float32) * 0.1)
        wt_t = rng.standard_normal((1, 3, size, size)).astype(np.float32) * 0.1
        return i_hr, i_gt, i_wt, wt_t

    def test_perfect_prediction_zero(self):
        rng = ad.make_rng(7)
        img = rng.random((1, 3, 13, 13)).astype(np.float32)
        wt = rng.standard_normal((1, 3, 13, 13)).astype(np.float32)
        total, parts = composite_loss(
            ad.Tensor(img.copy()), img, ad.Tensor(wt.copy()), wt, LossWeights()
        )
        assert total.item() == pytest.approx(0.0, abs=1e-7)
        assert parts["total"] == pytest.approx(0.0, abs=1e-7)

    def test_breakdown_recomposes_total(self):
        i_hr, i_gt, i_wt, wt_t = self._instance()
        weights = LossWeights()
        total, parts = composite_loss(i_hr, i_gt, i_wt, wt_t, weights)
        assert recompose(parts, weights) == pytest.approx(parts["total"], abs=1e-6)

    def test_weight_exchange_closed_form(self):
        i_hr, i_gt, i_wt, wt_t = self._instance()
        _, parts = composite_loss(i_hr, i_gt, i_wt, wt_t, LossWeights())
        swapped = LossWeights(sr=0.7, wt=0.3)
        total2, parts2 = composite_loss(i_hr, i_gt, i_wt, wt_t, swapped)
        assert parts2["sr"] == pytest.approx(parts["sr"], abs=1e-7)
        assert total2.item() == pytest.approx(
            0.7 * parts["sr"] + 0.3 * parts["wt"], abs=1e-6
        )

    def test_zero_wt_weight_silences_wt_only_gradients(self):
        rng = ad.make_rng(8)
        shared = ad.Parameters()
        proj_w = shared.add("proj.w", rng.standard_normal((3, 3, 1, 1)).astype(np.float32))
        feat = ad.Tensor(rng.random((1, 3, 13, 13)).astype(np.float32))
        i_gt = rng.random((1, 3, 13, 13)).astype(np.float32)
        wt_t = rng.random((1, 3, 13, 13)).astype(np.float32)

        with ad.Tape() as tape:
            i_wt = ad.conv2d(feat, proj_w)  # parameters only on the wavelet path
            total, _ = composite_loss(feat, i_gt, i_wt, wt_t, LossWeights(wt=0.0))
        shared.zero_grad()
        tape.backward(total)
        np.testing.assert_array_equal(proj_w.grad, np.zeros_like(proj_w.data))

    def test_gradient_linearity_in_branch_weights(self):
        rng = ad.make_rng(9)
        x = ad.Tensor(rng.random((1, 3, 13, 13)).astype(np.float32))
        i_gt = rng.random((1, 3, 13, 13)).astype(np.float32)
        wt_t = rng.random((1, 3, 13, 13)).astype(np.float32)

        def grad_for(weights):
            x.grad = np.zeros_like(x.data)
            with ad.Tape() as tape:
                total, _ = composite_loss(x, i_gt, x, wt_t, weights)
            tape.backward(total)
            return np.array(x.grad, copy=True)

        g_sr = grad_for(LossWeights(sr=1.0, wt=0.0))
        g_wt = grad_for(LossWeights(sr=0.0, wt=1.0))
        g_mix = grad_for(LossWeights(sr=0.3, wt=0.7))
        np.testing.assert_allclose(g_mix, 0.3 * g_sr + 0.7 * g_wt, atol=1e-5)

    def test_nonnegative_with_random_inputs(self):
        rng = ad.make_rng(10)
        for _ in range(10):
            i_hr = ad.Tensor(rng.random((1, 3, 12, 12)).astype(np.float32))
            i_gt = rng.random((1, 3, 12, 12)).astype(np.float32)
            total, _ = composite_loss(i_hr, i_gt, None, None, LossWeights())
            assert total.item() >= 0.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigurationError):
            LossWeights(sr=-0.1).validate()

    def test_mse_variant(self):
        rng = ad.make_rng(11)
        a = rng.random((1, 1, 4, 4)).astype(np.float32)
        b = rng.random((1, 1, 4, 4)).astype(np.float32)
        assert mse_loss(a, b).item() == pytest.approx(float(((a - b) ** 2).mean()), abs=1e-7)


class TestAdam:
    def test_zero_gradient_no_update(self):
        params = ad.Parameters()
        p = params.add("w", np.ones(4, dtype=np.float32))
        opt = Adam(params, lr=0.1)
        before = p.data.copy()
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_constant_gradient_step_magnitude_approaches_lr(self):
        params = ad.Parameters()
        p = params.add("w", np.zeros(3, dtype=np.float32))
        opt = Adam(params, lr=0.01)
        for t in params:
            t.grad[...] = 0.37
        prev = p.data.copy()
        for _ in range(300):
            opt.step()
            step = np.abs(p.data - prev).max()
            prev = p.data.copy()
        assert step == pytest.approx(0.01, rel=0.02)

    def test_bitwise_deterministic_trajectories(self):
        def run():
            params = ad.Parameters()
            p = params.add("w", np.linspace(-1, 1, 8, dtype=np.float32))
            opt = Adam(params, lr=1e-3)
            rng = ad.make_rng(42)
            for _ in range(20):
                p.grad[...] = rng.standard_normal(8).astype(np.float32)
                opt.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_state_roundtrip(self):
        params = ad.Parameters()
        p = params.add("w", np.ones(4, dtype=np.float32))
        opt = Adam(params, lr=0.1)
        p.grad[...] = 1.0
        opt.step()
        state = opt.state_dict()
        opt2 = Adam(params, lr=0.1)
        opt2.load_state_dict(state)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m[0], opt.m[0])


class TestCheckerSanity:
    def test_corrupted_gradient_rule_caught(self):
        """A deliberately wrong backward rule must fail the checker."""

        def bad_double(x):
            xd = ad._data(x)
            out = ad.Tensor(xd * 2.0)

            def bwd(g):
                return (g * 2.2,)  # true rule is 2.0

            return ad._record("bad_double", (ad._maybe(x),), out, bwd)

        x = ad.Tensor(np.linspace(0.1, 1.0, 8))
        rep = check_gradients(lambda: ad.tsum(bad_double(x)), [x], n_samples=8)
        assert not rep.passed()
