import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interfero import baselines as B
from interfero.coherence import raw_coherence

from oracles import direct_dft2


def noisy_raster(seed, shape=(40, 40)):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)).astype(np.complex64)


class TestBoxcar:
    def test_identity_k1(self):
        z = noisy_raster(0)
        np.testing.assert_array_equal(B.boxcar_filter(z, 1), z)

    def test_constant(self):
        z = np.full((9, 9), 0.5 - 2j, np.complex64)
        np.testing.assert_allclose(B.boxcar_filter(z, 5), z, atol=1e-6)

    def test_spike(self):
        z = np.zeros((7, 7), np.complex64)
        z[3, 3] = 1
        out = B.boxcar_filter(z, 3)
        expected = np.zeros((7, 7))
        expected[2:5, 2:5] = 1 / 9
        np.testing.assert_allclose(out, expected, atol=1e-7)

    def test_even_window(self):
        with pytest.raises(ValueError):
            B.boxcar_filter(noisy_raster(1), 4)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear(self, seed, a, b):
        x, y = noisy_raster(seed, (12, 10)), noisy_raster(seed + 1, (12, 10))
        lhs = B.boxcar_filter(a * x + b * y, 3)
        rhs = a * B.boxcar_filter(x, 3) + b * B.boxcar_filter(y, 3)
        np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_estimator(self):
        z = noisy_raster(2)
        est = B.BoxcarFilter(k=5).fit()
        np.testing.assert_array_equal(est.transform(z), B.boxcar_filter(z, 5))
        assert len(est.transform([z, z])) == 2
        assert est.get_params() == {"k": 5}


class TestGoldstein:
    def test_fft_matches_direct_dft(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        np.testing.assert_allclose(B.fft2(x), direct_dft2(x), atol=1e-6)
        np.testing.assert_allclose(B.ifft2(direct_dft2(x)), x, atol=1e-6)

    def test_single_patch_against_dft_oracle(self):
        rng = np.random.default_rng(4)
        z = (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))).astype(np.complex64)
        alpha = 0.5
        out = B.goldstein_filter(z, B.GoldsteinParams(alpha=alpha, patch=8, overlap=0, smooth=3))
        spec = direct_dft2(z.astype(complex))
        mag = np.abs(spec)
        smooth = sum(np.roll(np.roll(mag, di, 0), dj, 1)
                     for di in (-1, 0, 1) for dj in (-1, 0, 1)) / 9
        weighted = spec * smooth ** alpha
        # inverse DFT through the forward one: ifft(x) = conj(fft(conj(x))) / N
        expected = np.conj(direct_dft2(np.conj(weighted))) / 64
        np.testing.assert_allclose(out, expected, atol=1e-4 * np.abs(expected).max())

    @pytest.mark.parametrize("shape", [(40, 40), (33, 50), (10, 12)])
    def test_alpha_zero_identity(self, shape):
        z = noisy_raster(5, shape)
        out = B.goldstein_filter(z, B.GoldsteinParams(alpha=0.0))
        np.testing.assert_allclose(out, z, atol=1e-5)
        assert out.shape == z.shape

    def test_constant_reconstructs(self):
        z = np.full((50, 50), 1 + 1j, np.complex64)
        out = B.goldstein_filter(z, B.GoldsteinParams(alpha=0.0))
        np.testing.assert_allclose(out, z, atol=1e-5)

    def test_fringe_gradient_preserved(self):
        n = 128
        yy, xx = np.mgrid[0:n, 0:n]
        fx, fy = 3 / 32, 5 / 64
        fringe = np.exp(2j * np.pi * (fx * xx + fy * yy)).astype(np.complex64)
        rng = np.random.default_rng(6)
        noisy = fringe + 0.3 * (rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
        out = B.goldstein_filter(noisy.astype(np.complex64))
        gx = np.angle(np.sum(out[:, 1:] * np.conj(out[:, :-1])))
        gy = np.angle(np.sum(out[1:] * np.conj(out[:-1])))
        assert gx == pytest.approx(2 * np.pi * fx, rel=0.01)
        assert gy == pytest.approx(2 * np.pi * fy, rel=0.01)

    @pytest.mark.parametrize("c", [0.5, 3.0])
    def test_homogeneity(self, c):
        z = noisy_raster(7)
        p = B.GoldsteinParams(alpha=0.7)
        np.testing.assert_allclose(B.goldstein_filter(c * z, p),
                                   c ** 1.7 * B.goldstein_filter(z, p), rtol=1e-4, atol=1e-4)

    @pytest.mark.parametrize("kw", [dict(alpha=-1), dict(patch=30), dict(overlap=32),
                                    dict(smooth=0)])
    def test_params_validated(self, kw):
        with pytest.raises(ValueError):
            B.GoldsteinParams(**kw)

    def test_blend_window_partition_of_unity(self):
        w = B.blend_window(32, 16)
        total = np.zeros(32 + 16 * 4)
        for start in range(0, 16 * 4 + 1, 16):
            total[start:start + 32] += w
        np.testing.assert_allclose(total[16:-16], 1.0, atol=1e-12)

    def test_estimator(self):
        z = noisy_raster(8)
        est = B.GoldsteinFilter(alpha=0.3).fit()
        np.testing.assert_array_equal(est.transform(z),
                                      B.goldstein_filter(z, B.GoldsteinParams(alpha=0.3)))


class TestBaselineCoherence:
    def test_identical(self):
        z = noisy_raster(9)
        np.testing.assert_allclose(B.baseline_coherence(z, z, 5), 1.0, atol=1e-6)

    def test_same_code_path(self):
        a, b = noisy_raster(10), noisy_raster(11)
        assert B.baseline_coherence(a, b, 11).tobytes() == raw_coherence(a, b, 11).tobytes()

    @pytest.mark.parametrize("k", [5, 11])
    def test_independent_phases(self, k):
        rng = np.random.default_rng(12)
        a = np.exp(1j * rng.uniform(-np.pi, np.pi, (300, 300)))
        b = np.exp(1j * rng.uniform(-np.pi, np.pi, (300, 300)))
        # mean |sum of k^2 unit phasors| / k^2 is sqrt(pi)/2 / k for large k
        assert B.baseline_coherence(a, b, k).mean() == pytest.approx(1 / k, abs=0.03)
