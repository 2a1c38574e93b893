"""Range-Doppler pipeline: FFT oracles, normalization, resize."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_dft
from rdfewshot.exceptions import ConfigError, DegenerateInputError
from rdfewshot.radar import (ChirpConfig, MapMeta, RawFrame, doppler_fft,
                             frame_to_rdmap, normalize, range_fft,
                             resize_bilinear, resize_for_network)
from rdfewshot.synth import line_of_sight_target, synth_frame


def make_frame(chirp, samples):
    return RawFrame(samples=samples, config=chirp)


class TestChirpConfig:
    def test_defaults_are_self_consistent(self, chirp):
        assert chirp.slope == pytest.approx(chirp.bandwidth / chirp.chirp_duration, rel=1e-12)
        assert chirp.samples_per_chirp == pytest.approx(
            chirp.sample_rate * chirp.chirp_duration, abs=1)
        assert chirp.carrier_center == pytest.approx(79.0e9)

    def test_inconsistent_slope_rejected(self):
        with pytest.raises(ConfigError):
            ChirpConfig(slope=1.0)

    def test_inconsistent_sampling_rejected(self):
        with pytest.raises(ConfigError):
            ChirpConfig(samples_per_chirp=300)

    def test_nonpositive_field_rejected(self):
        with pytest.raises(ConfigError):
            ChirpConfig(bandwidth=-1.0)

    def test_doppler_frequency_at_79ghz(self, chirp):
        # 1 m/s at the center carrier is about 527 Hz
        assert chirp.doppler_frequency(1.0) == pytest.approx(527.0, abs=1.0)


class TestRangeFFT:
    def test_pure_tone_peaks_at_its_bin(self, chirp):
        n = chirp.samples_per_chirp
        j = 37
        tone = np.exp(2j * np.pi * j * np.arange(n) / n)
        samples = np.tile(tone, (chirp.chirps_per_frame, 1))
        out = np.abs(range_fft(make_frame(chirp, samples)))
        assert out[0].argmax() == j
        others = np.delete(out[0], j)
        assert others.max() < 1e-9 * out[0, j]

    def test_zero_frame_gives_zero_output(self, chirp):
        samples = np.zeros((chirp.chirps_per_frame, chirp.samples_per_chirp), complex)
        assert not range_fft(make_frame(chirp, samples)).any()

    def test_matches_naive_dft(self, chirp, rng):
        samples = rng.standard_normal((chirp.chirps_per_frame, chirp.samples_per_chirp)) \
            + 1j * rng.standard_normal((chirp.chirps_per_frame, chirp.samples_per_chirp))
        out = range_fft(make_frame(chirp, samples))
        for row in (0, 100, 255):
            expected = naive_dft(samples[row])
            err = np.abs(out[row] - expected).max() / np.abs(expected).max()
            assert err < 1e-6

    def test_dimension_mismatch_is_config_error(self, chirp):
        with pytest.raises(ConfigError):
            make_frame(chirp, np.zeros((8, 8), complex))

    def test_linearity(self, chirp, rng):
        shape = (chirp.chirps_per_frame, chirp.samples_per_chirp)
        f1 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        f2 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        a, b = 2.3, -0.7 + 0.2j
        lhs = range_fft(make_frame(chirp, a * f1 + b * f2))
        rhs = a * range_fft(make_frame(chirp, f1)) + b * range_fft(make_frame(chirp, f2))
        assert np.abs(lhs - rhs).max() <= 1e-9 * np.abs(rhs).max()

    def test_parseval(self, chirp, rng):
        shape = (chirp.chirps_per_frame, chirp.samples_per_chirp)
        f = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        out = range_fft(make_frame(chirp, f))
        time_e = np.sum(np.abs(f) ** 2, axis=1)
        freq_e = np.sum(np.abs(out) ** 2, axis=1) / chirp.samples_per_chirp
        assert np.allclose(time_e, freq_e, rtol=1e-6)


class TestDopplerFFT:
    def test_stationary_energy_in_center_bin(self, chirp, rng):
        profile = np.tile(rng.standard_normal(256) + 0.5j, (256, 1))
        out = np.abs(doppler_fft(profile))
        assert (out.argmax(axis=0) == 128).all()

    def test_constant_velocity_bin(self, chirp):
        v = 1.7
        fd = chirp.doppler_frequency(v)
        n = chirp.chirps_per_frame
        phases = np.exp(2j * np.pi * fd * np.arange(n) * chirp.chirp_duration)
        profile = np.outer(phases, np.ones(chirp.samples_per_chirp))
        out = np.abs(doppler_fft(profile))
        expected = chirp.doppler_bin(v)
        assert out[:, 10].argmax() == expected

    def test_matches_naive_dft(self, chirp, rng):
        profile = rng.standard_normal((256, 256)) + 1j * rng.standard_normal((256, 256))
        out = doppler_fft(profile)
        col = 123
        expected = np.fft.fftshift(naive_dft(profile[:, col]))
        err = np.abs(out[:, col] - expected).max() / np.abs(expected).max()
        assert err < 1e-6

    def test_rejects_non_2d(self):
        with pytest.raises(ConfigError):
            doppler_fft(np.zeros(16, complex))


class TestNormalize:
    def test_worked_example(self):
        out = normalize(np.array([[2.0, 4.0], [6.0, 8.0]]))
        assert np.allclose(out, [[0.0, 0.25], [0.5, 0.75]])

    def test_zero_min_maps_max_to_one(self):
        out = normalize(np.array([[0.0, 5.0], [2.5, 1.0]]))
        assert out.max() == pytest.approx(1.0)
        assert out.min() == 0.0

    def test_constant_positive_matrix_maps_to_zeros(self):
        assert not normalize(np.full((4, 4), 3.3)).any()

    def test_nonpositive_max_rejected(self):
        with pytest.raises(DegenerateInputError):
            normalize(np.zeros((3, 3)))
        with pytest.raises(DegenerateInputError):
            normalize(np.full((3, 3), -1.0))

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_output_in_unit_interval_for_magnitudes(self, seed):
        r = np.random.default_rng(seed)
        x = np.abs(r.standard_normal((8, 8))) + 1e-9
        out = normalize(x)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestFrameToRDMap:
    def test_single_scatterer_peak_at_predicted_bins(self, chirp):
        r_m, v = 2.4, 0.0
        frame = synth_frame(line_of_sight_target(r_m, v), chirp, snr_db=None)
        rdmap = frame_to_rdmap(frame)
        pr, pd = rdmap.peak_bins
        assert abs(pr - chirp.range_bin(r_m)) <= 1
        assert abs(pd - chirp.doppler_bin(v)) <= 1

    def test_two_scatterers_two_peaks(self, chirp):
        from rdfewshot.synth import MotionModel
        m1 = line_of_sight_target(2.4, 0.0)
        m2 = line_of_sight_target(4.8, 1.5)
        both = MotionModel(class_label="pair",
                           scatterers=m1.scatterers + m2.scatterers)
        rdmap = frame_to_rdmap(synth_frame(both, chirp, snr_db=None))
        values = rdmap.values.copy()
        peaks = []
        for _ in range(2):
            idx = np.unravel_index(values.argmax(), values.shape)
            peaks.append(idx)
            r0, d0 = idx
            values[max(0, r0 - 4):r0 + 5, max(0, d0 - 4):d0 + 5] = 0.0
        expected = {(2.4, 0.0), (4.8, 1.5)}
        for r_m, v in expected:
            want = (chirp.range_bin(r_m), chirp.doppler_bin(v))
            assert any(abs(p[0] - want[0]) <= 1 and abs(p[1] - want[1]) <= 1
                       for p in peaks), (want, peaks)

    def test_zero_frame_raises_degenerate(self, chirp):
        frame = make_frame(chirp, np.zeros((256, 256), complex))
        with pytest.raises(DegenerateInputError):
            frame_to_rdmap(frame)

    def test_deterministic(self, chirp):
        frame = synth_frame(line_of_sight_target(3.0, 0.5), chirp, rng_seed=5, snr_db=10.0)
        a = frame_to_rdmap(frame, MapMeta()).values
        b = frame_to_rdmap(frame, MapMeta()).values
        assert np.array_equal(a, b)

    def test_values_in_unit_interval(self, chirp):
        frame = synth_frame(line_of_sight_target(3.0, -1.0), chirp, rng_seed=3, snr_db=5.0)
        values = frame_to_rdmap(frame).values
        assert values.min() >= 0.0 and values.max() <= 1.0


class TestResize:
    def test_identity_resize_exact(self, rng):
        x = rng.random((256, 256))
        assert np.abs(resize_bilinear(x, 256, 256) - x).max() < 1e-12

    def test_replicates_channels(self, rng):
        x = rng.random((256, 256)).astype(np.float32)
        out = resize_for_network(x, 84, 84, channels=3)
        assert out.shape == (3, 84, 84)
        assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])

    def test_constant_preserved(self):
        out = resize_for_network(np.full((100, 100), 0.37), 84, 84, channels=2)
        assert np.allclose(out, 0.37)

    def test_range_preserved(self, rng):
        x = rng.random((256, 256))
        out = resize_bilinear(x, 84, 84)
        assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12

    def test_bad_target_rejected(self, rng):
        with pytest.raises(ConfigError):
            resize_bilinear(rng.random((8, 8)), 0, 4)
