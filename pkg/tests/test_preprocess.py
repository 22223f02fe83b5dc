import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from interfero.preprocess import (NormalizedPair, denormalize, detect_outliers, modified_zscore,
                                  normalize_shift, preprocess, saturate_amplitudes)

from oracles import modified_zscores


def row(amplitudes):
    return np.asarray(amplitudes, dtype=np.complex64)[None, :]


class TestOutliers:
    def test_single_spike_with_zero_mad(self):
        mask = detect_outliers(row([1, 1, 1, 1, 100]))
        assert mask.tolist() == [[False, False, False, False, True]]

    def test_constant(self):
        assert not detect_outliers(np.full((4, 4), 2 + 0j)).any()

    def test_uniform_plus_one_spike(self):
        rng = np.random.default_rng(0)
        amp = rng.uniform(0.9, 1.1, size=400)
        amp[123] = 50.0
        mask = detect_outliers(row(amp))[0]
        assert np.flatnonzero(mask).tolist() == [123]

    def test_scores_match_oracle(self):
        rng = np.random.default_rng(1)
        for values in (rng.lognormal(size=31), [1, 1, 1, 1, 100], rng.normal(size=40) ** 2):
            np.testing.assert_allclose(modified_zscore(values), modified_zscores(list(values)),
                                       rtol=1e-12)

    def test_all_zero(self):
        with pytest.raises(ValueError):
            detect_outliers(np.zeros((3, 3), complex))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
    def test_scale_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        z = (rng.lognormal(sigma=1.5, size=(8, 8)) * np.exp(1j * rng.uniform(-3, 3, (8, 8))))
        np.testing.assert_array_equal(detect_outliers(z), detect_outliers(c * z))


class TestSaturate:
    def test_empty_mask_identity(self):
        z = np.array([[1 + 2j, -3j]], np.complex64)
        np.testing.assert_array_equal(saturate_amplitudes(z, np.zeros(z.shape, bool)), z)

    def test_polar_rescale(self):
        theta = 0.7
        z = np.array([[2.0, 1.0, 100 * np.exp(1j * theta)]], np.complex64)
        out = saturate_amplitudes(z, np.array([[False, False, True]]))
        assert abs(out[0, 2]) == pytest.approx(2.0, rel=1e-6)
        assert abs(np.angle(out[0, 2]) - theta) < 1e-6
        np.testing.assert_array_equal(out[0, :2], z[0, :2])

    def test_zero_amplitude_flagged(self):
        z = np.array([[0j, 1 + 0j]], np.complex64)
        assert saturate_amplitudes(z, np.array([[True, False]]))[0, 0] == 0

    def test_mask_shape(self):
        with pytest.raises(ValueError):
            saturate_amplitudes(np.ones((2, 2), complex), np.zeros((2, 3), bool))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_phase_preserved(self, seed):
        rng = np.random.default_rng(seed)
        z = (rng.standard_cauchy((16, 16)) * np.exp(1j * rng.uniform(-3, 3, (16, 16))))
        z = z.astype(np.complex64)
        out = saturate_amplitudes(z, detect_outliers(z))
        nz = np.abs(z) > 0
        err = np.angle(np.exp(1j * (np.angle(out[nz]).astype(float) - np.angle(z[nz]))))
        assert np.abs(err).max() < 1e-6


class TestNormalize:
    def test_single_pixel(self):
        pair = normalize_shift(row([1 + 0j]))
        np.testing.assert_array_equal(pair.channels[:, 0, 0], [2.0, 1.0])
        assert pair.scale == 1.0

    def test_minimum_real(self):
        pair = normalize_shift(row([-3 + 0j, 1 + 1j]))
        assert pair.channels[0, 0, 0] == 0.0

    def test_all_zero(self):
        with pytest.raises(ValueError):
            normalize_shift(np.zeros((2, 2), complex))

    def test_denormalize_examples(self):
        ones = NormalizedPair(np.ones((2, 3, 3), np.float32), 4.0)
        assert not denormalize(ones).any()
        pair = NormalizedPair(np.array([[[2.0]], [[1.0]]], np.float32), 2.0)
        assert denormalize(pair)[0, 0] == 2 + 0j

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        z = (rng.normal(size=(9, 7)) + 1j * rng.normal(size=(9, 7))).astype(np.complex64)
        back = denormalize(normalize_shift(z))
        np.testing.assert_allclose(back, z, atol=1e-6 * np.abs(z).max() * 4)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_range_heavy_tailed(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.standard_cauchy((12, 12)) + 1j * rng.standard_cauchy((12, 12))
        ch = preprocess(z).channels
        assert ch.min() >= 0.0 and ch.max() <= 2.0

    def test_pair_invariants(self):
        with pytest.raises(ValueError):
            NormalizedPair(np.full((2, 2, 2), 3.0, np.float32), 1.0)
        with pytest.raises(ValueError):
            NormalizedPair(np.ones((2, 2, 2), np.float32), 0.0)
