"""Feature front-end against independent spectral oracles."""

import numpy as np
import pytest

from echopose import features as ft


def naive_windowed_dft(frame: np.ndarray) -> np.ndarray:
    """O(N^2) reference DFT of one Hann-windowed frame (rFFT bins)."""
    n = len(frame)
    x = frame * ft.hann(n)
    k = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / n)
    return basis @ x


@pytest.fixture(scope="module")
def bank():
    return ft.mel_bank()


class TestStft:
    def test_matches_naive_dft_on_random_signals(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.normal(size=1024)
            spec = ft.stft(x, 256, 128)
            frame_idx = rng.integers(spec.shape[0])
            ref = naive_windowed_dft(x[frame_idx * 128 : frame_idx * 128 + 256])
            num = np.abs(spec[frame_idx])
            den = np.maximum(np.abs(ref), 1e-12)
            assert np.max(np.abs(num - np.abs(ref)) / den) < 1e-6

    def test_zero_input_zero_output(self):
        assert np.allclose(ft.stft(np.zeros(600), 256, 128), 0.0)

    def test_parseval_per_frame(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=512)
        spec = ft.stft(x, 512, 512)[0]
        windowed = x * ft.hann(512)
        time_energy = np.sum(windowed**2)
        # rFFT keeps half the spectrum; double interior bins
        mags = np.abs(spec) ** 2
        spec_energy = (mags[0] + mags[-1] + 2 * np.sum(mags[1:-1])) / 512
        assert abs(time_energy - spec_energy) / time_energy < 1e-9

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            ft.stft(np.zeros(1000), 300, 100)  # not a power of two
        with pytest.raises(ValueError):
            ft.stft(np.zeros(100), 256, 128)  # too short
        with pytest.raises(ValueError):
            ft.stft(np.zeros(1000), 256, 512)  # hop > n_fft


class TestMelBank:
    def test_every_filter_nonempty(self, bank):
        assert np.all(bank.weights.sum(axis=1) > 0)

    def test_centers_increase_on_mel_scale(self, bank):
        assert np.all(np.diff(ft.hz_to_mel(bank.centers_hz)) > 0)

    def test_pure_tone_argmax_matches_center(self, bank):
        sr, period = 16000, 600
        t = np.arange(period) / sr
        for j, fc in enumerate(bank.centers_hz):
            x = np.sin(2 * np.pi * fc * t)
            spec = ft.stft(x, bank.n_fft, 256)
            power = np.mean(np.abs(spec) ** 2, axis=0)
            assert int(np.argmax(bank.weights @ power)) == j


class TestLogmel:
    def test_silence_hits_floor(self, bank):
        audio = np.zeros((4, 600))
        spec = ft.stft_bformat(audio)
        lm = ft.logmel_frame(spec, bank)
        assert lm.shape == (bank.b, 4)
        assert np.allclose(lm, np.log(ft.EPS_FLOOR))

    def test_power_scaling_adds_log100(self, bank):
        rng = np.random.default_rng(2)
        audio = np.tile(rng.normal(size=600), (4, 1))
        a = ft.logmel_frame(ft.stft_bformat(audio), bank)
        b = ft.logmel_frame(ft.stft_bformat(10.0 * audio), bank)
        strong = a > np.log(ft.EPS_FLOOR) + 6  # well above the floor
        assert np.allclose((b - a)[strong], np.log(100.0), atol=1e-6)

    def test_monotone_in_input_power(self, bank):
        rng = np.random.default_rng(3)
        audio = rng.normal(size=(4, 600))
        a = ft.logmel_frame(ft.stft_bformat(audio), bank)
        b = ft.logmel_frame(ft.stft_bformat(1.7 * audio), bank)
        assert np.all(b >= a - 1e-12)


class TestIntensity:
    def test_plane_wave_from_x(self, bank):
        rng = np.random.default_rng(4)
        s = rng.normal(size=600)
        audio = np.stack([s, s, np.zeros(600), np.zeros(600)])
        rows = ft.intensity_frame(ft.stft_bformat(audio), bank)
        powers = ft.logmel_frame(ft.stft_bformat(audio), bank)[:, 0]
        energetic = powers > np.log(ft.EPS_FLOOR) + 10
        assert np.all(rows[energetic, 0] > 0.9)
        assert np.allclose(rows[energetic, 1:], 0.0, atol=1e-9)

    @pytest.mark.parametrize("azimuth_deg", range(0, 360, 30))
    def test_azimuth_recovery(self, bank, azimuth_deg):
        rng = np.random.default_rng(5)
        s = rng.normal(size=600)
        az = np.radians(azimuth_deg)
        audio = np.stack([s, s * np.cos(az), s * np.sin(az), np.zeros(600)])
        rows = ft.intensity_frame(ft.stft_bformat(audio), bank)
        powers = ft.logmel_frame(ft.stft_bformat(audio), bank)[:, 0]
        energetic = powers > np.log(ft.EPS_FLOOR) + 10
        recovered = np.degrees(np.arctan2(rows[energetic, 1], rows[energetic, 0]))
        err = np.abs((recovered - azimuth_deg + 180) % 360 - 180)
        assert np.max(err) < 5.0

    def test_zero_w_channel_zeroes_rows(self, bank):
        rng = np.random.default_rng(6)
        audio = rng.normal(size=(4, 600))
        audio[0] = 0.0
        rows = ft.intensity_frame(ft.stft_bformat(audio), bank)
        assert np.allclose(rows, 0.0)

    def test_row_norms_bounded(self, bank):
        rng = np.random.default_rng(7)
        audio = rng.normal(size=(4, 1200))
        rows = ft.intensity_frame(ft.stft_bformat(audio), bank)
        assert np.all(np.linalg.norm(rows, axis=1) <= 1.0 + 1e-6)


class TestAssemble:
    def test_shape_and_roundtrip(self):
        rng = np.random.default_rng(8)
        lm, iv = rng.normal(size=(64, 4)), rng.normal(size=(64, 3))
        frame = ft.assemble(lm, iv)
        assert frame.as_matrix().shape == (64, 7)
        lm2, iv2 = ft.disassemble(frame)
        assert np.array_equal(lm, lm2) and np.array_equal(iv, iv2)

    def test_channel_order_sentinels(self):
        lm = np.zeros((8, 4))
        iv = np.zeros((8, 3))
        for c in range(4):
            lm[:, c] = c + 1
        for c in range(3):
            iv[:, c] = 10 * (c + 1)
        mat = ft.assemble(lm, iv).as_matrix()
        assert np.allclose(mat[0], [1, 2, 3, 4, 10, 20, 30])

    def test_band_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ft.assemble(np.zeros((8, 4)), np.zeros((9, 3)))

    def test_deterministic_features_from_audio(self):
        rng = np.random.default_rng(9)
        audio = rng.normal(size=(4, 600))
        bank = ft.mel_bank()
        a = ft.period_features(audio, bank).as_matrix()
        b = ft.period_features(audio.copy(), bank).as_matrix()
        assert np.array_equal(a, b)


class TestPca:
    def test_planar_data_fully_explained(self):
        rng = np.random.default_rng(10)
        basis = rng.normal(size=(2, 40))
        coords = rng.normal(size=(100, 2))
        x = coords @ basis + rng.normal(size=40) * 0.0
        points, var = ft.pca_project(x, dims=2)
        assert var[0] >= var[1]
        total = np.sum(np.var(x - x.mean(0), axis=0))
        assert (var[0] + var[1]) / total > 0.999

    def test_rotation_preserves_pairwise_distances(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(50, 12)) @ np.diag(np.linspace(3, 0.1, 12))
        q, _ = np.linalg.qr(rng.normal(size=(12, 12)))
        p1, _ = ft.pca_project(x, dims=2)
        p2, _ = ft.pca_project(x @ q.T, dims=2)
        d1 = np.linalg.norm(p1[:, None] - p1[None], axis=2)
        d2 = np.linalg.norm(p2[:, None] - p2[None], axis=2)
        assert np.max(np.abs(d1 - d2)) < 1e-6

    def test_degenerate_inputs_rejected(self):
        with pytest.raises(ValueError):
            ft.pca_project(np.ones((1, 5)), dims=2)
        with pytest.raises(ValueError):
            ft.pca_project(np.ones((10, 5)), dims=2)  # zero variance

    def test_axes_orthonormal(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(200, 30)) @ np.diag(np.linspace(2, 0.05, 30))
        xc = x - x.mean(0)
        points, var = ft.pca_project(x, dims=2)
        # recover axes by regression: points = xc @ axes.T
        axes, *_ = np.linalg.lstsq(xc, points, rcond=None)
        gram = axes.T @ axes
        assert np.allclose(gram, np.eye(2), atol=1e-9)
