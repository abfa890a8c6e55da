"""Bicubic resampling: identity, constancy, energy, determinism, gradient."""

import numpy as np
import pytest

from cwtnet import autodiff as ad
from cwtnet.errors import ConfigurationError
from cwtnet.resample import resize_array, resize_bicubic, resize_matrix


class TestResize:
    def test_scale_one_identity(self):
        rng = ad.make_rng(0)
        x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
        np.testing.assert_array_equal(resize_array(x, 1), x)
        np.testing.assert_array_equal(resize_bicubic(x, 1).data, x)

    def test_constant_preserved_at_every_scale(self):
        x = np.full((1, 2, 8, 8), 0.73, dtype=np.float32)
        for scale in (0.125, 0.25, 0.5, 2, 4, 8):
            y = resize_array(x, scale)
            np.testing.assert_allclose(y, 0.73, atol=1e-6)

    def test_rows_sum_to_one(self):
        for n_in, n_out in [(8, 16), (16, 8), (8, 24), (12, 3)]:
            mat = resize_matrix(n_in, n_out)
            np.testing.assert_allclose(mat.sum(axis=1), 1.0, atol=1e-12)

    def test_down_up_cosine_loses_energy(self):
        j = np.arange(16)
        cos = np.cos(2 * np.pi * j / 16)
        x = np.tile(cos, (16, 1)).astype(np.float32)[None, None]
        roundtrip = resize_array(resize_array(x, 0.5), 2)
        ratio = float((roundtrip ** 2).sum() / (x ** 2).sum())
        assert ratio < 1.0

    def test_deterministic_bit_pattern(self):
        rng = ad.make_rng(1)
        x = rng.standard_normal((1, 3, 12, 12)).astype(np.float32)
        a = resize_array(x, 2)
        b = resize_array(x, 2)
        assert np.array_equal(a, b)

    def test_nonpositive_scale_rejected(self):
        x = np.zeros((1, 1, 4, 4), dtype=np.float32)
        with pytest.raises(ConfigurationError):
            resize_array(x, 0)
        with pytest.raises(ConfigurationError):
            resize_bicubic(x, -2)

    def test_shape_arithmetic(self):
        x = np.zeros((1, 1, 32, 48), dtype=np.float32)
        assert resize_array(x, 0.5).shape == (1, 1, 16, 24)
        assert resize_array(x, 2).shape == (1, 1, 64, 96)
        assert resize_array(x, 0.25).shape == (1, 1, 8, 12)

    def test_gradient_is_transpose(self):
        rng = ad.make_rng(2)
        x = ad.Tensor(rng.standard_normal((1, 2, 6, 6)))
        wgt = rng.standard_normal((1, 2, 12, 12))

        def f():
            return ad.tsum(ad.mul(resize_bicubic(x, 2), wgt))

        with ad.Tape() as tape:
            loss = f()
        tape.backward(loss)

        h = 1e-6
        flat = x.data.reshape(-1)
        gflat = x.grad.reshape(-1)
        worst = 0.0
        for i in range(0, flat.size, 5):
            orig = flat[i]
            flat[i] = orig + h
            f1 = f().item()
            flat[i] = orig - h
            f2 = f().item()
            flat[i] = orig
            num = (f1 - f2) / (2 * h)
            worst = max(worst, abs(num - gflat[i]) / max(abs(num), abs(gflat[i]), 1e-6))
        assert worst < 1e-3
