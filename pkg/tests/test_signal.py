import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scatterloc.signal import (
    ComplexSpectrogram,
    TimeSignal,
    add_noise_at_snr,
    convolve,
    empirical_psd,
    hann_window,
    magnitude,
    read_wav,
    stft,
    write_wav,
)

FS = 16000


def sig(x, fs=FS):
    return TimeSignal(np.asarray(x, dtype=float), fs)


def brute_convolution(x, h):
    out = np.zeros(len(x) + len(h) - 1)
    for n in range(out.size):
        for k in range(len(h)):
            if 0 <= n - k < len(x):
                out[n] += h[k] * x[n - k]
    return out


class TestTimeSignal:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            sig([0.0, np.nan])

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError):
            TimeSignal(np.zeros(4), 0)


class TestConvolve:
    def test_identity_kernel(self):
        np.testing.assert_array_equal(convolve(sig([1, 0, 0]), [1]).samples, [1, 0, 0])

    def test_unit_delay(self):
        np.testing.assert_array_equal(convolve(sig([1, 2]), [0, 1]).samples, [0, 1, 2])

    def test_matches_direct_sum(self):
        x = np.random.default_rng(7).standard_normal(256)
        h = np.random.default_rng(9).standard_normal(16)
        out = convolve(sig(x), h)
        assert len(out) == 256 + 16 - 1
        assert out.sample_rate == FS
        np.testing.assert_allclose(out.samples, brute_convolution(x, h), rtol=0, atol=1e-12)

    def test_long_kernel_uses_fft_path(self):
        rng = np.random.default_rng(1)
        x, h = rng.standard_normal(300), rng.standard_normal(200)
        np.testing.assert_allclose(convolve(sig(x), h).samples, np.convolve(x, h), atol=1e-10)

    def test_empty_kernel(self):
        with pytest.raises(ValueError):
            convolve(sig([1.0]), [])

    @settings(max_examples=30, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 1000))
    def test_linearity(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x, z, h = rng.standard_normal(100), rng.standard_normal(100), rng.standard_normal(90)
        lhs = convolve(sig(a * x + b * z), h).samples
        rhs = a * convolve(sig(x), h).samples + b * convolve(sig(z), h).samples
        scale = max(np.linalg.norm(rhs), 1e-300)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * scale + 1e-12


class TestNoise:
    def test_infinite_snr_is_identity(self):
        x = sig(np.sin(np.arange(100)))
        assert add_noise_at_snr(x, np.inf, 0) is x

    @pytest.mark.parametrize("snr", [-5.0, 0.0, 20.0, 47.5])
    def test_realized_snr_exact(self, snr):
        x = sig(np.random.default_rng(3).standard_normal(4000))
        y = add_noise_at_snr(x, snr, 11)
        measured = 20 * np.log10(np.linalg.norm(x.samples) / np.linalg.norm(y.samples - x.samples))
        assert measured == pytest.approx(snr, abs=1e-9)

    def test_deterministic(self):
        x = sig(np.ones(50))
        np.testing.assert_array_equal(add_noise_at_snr(x, 10, 5).samples, add_noise_at_snr(x, 10, 5).samples)

    def test_zero_signal_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            add_noise_at_snr(sig(np.zeros(10)), 10, 0)


class TestSTFT:
    def test_default_framing(self):
        # 64 ms at 16 kHz with 50% overlap
        s = stft(sig(np.zeros(FS)), 1024, 512)
        assert s.bins.shape[0] == 513
        assert s.frame_hop == 512
        assert s.freq_axis[0] == 0 and s.freq_axis[-1] == FS / 2
        assert np.all(np.diff(s.freq_axis) > 0)

    def test_cosine_bin_placement(self):
        k = 100
        f = k * FS / 1024
        x = np.cos(2 * np.pi * f * np.arange(FS) / FS)
        mag = np.abs(stft(sig(x), 1024).bins)
        assert np.all(np.argmax(mag, axis=0)[:-1] == k)

    def test_zero_signal(self):
        assert not np.any(stft(sig(np.zeros(3000)), 1024).bins)

    @pytest.mark.parametrize(
        "n, frames", [(1024, 1), (1025, 2), (1536, 2), (1537, 3), (100, 1), (8000, 15)]
    )
    def test_frame_count_pads_tail(self, n, frames):
        assert stft(sig(np.ones(n)), 1024, 512).n_frames == frames

    def test_tail_samples_are_analysed(self):
        x = np.zeros(1600)
        x[-1] = 1.0
        assert np.any(stft(sig(x), 1024).bins[:, -1])

    def test_hann_cola(self):
        w = hann_window(1024)
        total = np.zeros(1024 * 6)
        for start in range(0, total.size - 1024 + 1, 512):
            total[start : start + 1024] += w
        np.testing.assert_allclose(total[1024:-1024], 1.0, atol=1e-12)

    def test_rejects_odd_window(self):
        with pytest.raises(ValueError):
            stft(sig(np.ones(10)), 1023)

    def test_rejects_hop_larger_than_window(self):
        with pytest.raises(ValueError):
            stft(sig(np.ones(10)), 16, 32)

    def test_narrowband_approximation(self):
        rng = np.random.default_rng(0)
        x = sig(rng.standard_normal(3 * FS))
        h = rng.standard_normal(32) * np.exp(-np.arange(32) / 8)
        Y = np.abs(stft(convolve(x, h), 1024).bins)
        X = np.abs(stft(x, 1024).bins)
        H = np.abs(np.fft.rfft(h, 1024))
        n = X.shape[1]
        err = np.linalg.norm(Y[:, :n] - H[:, None] * X) / np.linalg.norm(Y[:, :n])
        assert err <= 0.15


class TestMagnitudeAndPSD:
    def _spec(self, bins):
        return ComplexSpectrogram(bins, np.arange(bins.shape[0], dtype=float), 2, 2 * (bins.shape[0] - 1))

    def test_pythagorean(self):
        s = self._spec(np.array([[3 + 4j], [0j]]))
        np.testing.assert_array_equal(magnitude(s).values, [[5.0], [0.0]])

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(2)
        b = rng.standard_normal((9, 7)) + 1j * rng.standard_normal((9, 7))
        m = magnitude(self._spec(b))
        np.testing.assert_allclose(m.values, np.sqrt(b.real**2 + b.imag**2), rtol=1e-12)
        assert m.frame_hop == 2

    def test_psd_single_frame(self):
        b = np.array([[1 + 1j], [2.0 + 0j], [0j]])
        np.testing.assert_allclose(empirical_psd(self._spec(b)), [2.0, 4.0, 0.0], rtol=1e-15)

    def test_psd_duplicate_frames(self):
        b = np.array([[1 + 2j], [3j], [1.0 + 0j]])
        np.testing.assert_allclose(empirical_psd(self._spec(np.hstack([b, b]))), empirical_psd(self._spec(b)))

    def test_psd_permutation_invariant(self):
        rng = np.random.default_rng(4)
        b = rng.standard_normal((5, 12)) + 1j * rng.standard_normal((5, 12))
        perm = rng.permutation(12)
        np.testing.assert_allclose(empirical_psd(self._spec(b[:, perm])), empirical_psd(self._spec(b)), rtol=1e-13)

    def test_white_psd_is_flat(self):
        n = 149 * 512 + 1024  # exactly 150 frames
        s = stft(sig(np.random.default_rng(5).standard_normal(n)), 1024)
        assert s.n_frames == 150
        psd = empirical_psd(s)
        dev = np.abs(psd / psd.mean() - 1)
        assert np.mean(dev <= 0.25) >= 0.99


class TestWav:
    @pytest.mark.parametrize("fmt, atol", [("float32", 1e-7), ("pcm16", 1 / 32768)])
    def test_roundtrip(self, tmp_path, fmt, atol):
        x = sig(0.5 * np.sin(np.arange(400) / 7))
        write_wav(tmp_path / "a.wav", x, fmt)
        y = read_wav(tmp_path / "a.wav")
        assert y.sample_rate == FS
        np.testing.assert_allclose(y.samples, x.samples, atol=atol)

    def test_stereo_rejected(self, tmp_path):
        from scipy.io import wavfile

        wavfile.write(tmp_path / "s.wav", FS, np.zeros((10, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="mono"):
            read_wav(tmp_path / "s.wav")
