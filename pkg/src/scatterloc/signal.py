"""Time-domain and time-frequency primitives.

All spectra are one-sided and use the unnormalized DFT convention of
:func:`numpy.fft.rfft`.  Frames are not centered: the first frame starts at
sample 0 and the tail is zero-padded to complete the last frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "TimeSignal",
    "ComplexSpectrogram",
    "MagSpectrogram",
    "convolve",
    "add_noise_at_snr",
    "hann_window",
    "stft",
    "magnitude",
    "empirical_psd",
    "read_wav",
    "write_wav",
]


@dataclass(frozen=True)
class TimeSignal:
    """A sampled mono waveform."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError("sample_rate must be a positive integer")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class ComplexSpectrogram:
    """One-sided STFT, ``bins`` has shape (F, N)."""

    bins: np.ndarray
    freq_axis: np.ndarray
    frame_hop: int
    window_len: int

    def __post_init__(self):
        if self.bins.shape[0] != self.window_len // 2 + 1:
            raise ValueError("bins must have window_len/2 + 1 rows")
        if self.freq_axis.shape[0] != self.bins.shape[0]:
            raise ValueError("freq_axis length must match the number of bins")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]


@dataclass(frozen=True)
class MagSpectrogram:
    """Non-negative magnitude spectrogram, ``values`` has shape (F, N)."""

    values: np.ndarray
    freq_axis: np.ndarray
    frame_hop: int | None = None
    window_len: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D array")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("magnitudes must be finite and non-negative")
        if np.asarray(self.freq_axis).shape[0] != values.shape[0]:
            raise ValueError("freq_axis length must match the number of rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "freq_axis", np.asarray(self.freq_axis, dtype=float))


def _as_signal(x) -> TimeSignal:
    if isinstance(x, TimeSignal):
        return x
    raise TypeError("expected a TimeSignal")


def convolve(x: TimeSignal, h) -> TimeSignal:
    """Full linear convolution of ``x`` with the kernel ``h``."""
    x = _as_signal(x)
    h = np.asarray(h, dtype=float).ravel()
    if len(x) == 0 or h.size == 0:
        raise ValueError("convolve requires nonempty signal and kernel")
    # direct method keeps results exact for short kernels; FFT for long ones
    if min(len(x), h.size) <= 64:
        out = np.convolve(x.samples, h)
    else:
        from scipy.signal import fftconvolve

        out = fftconvolve(x.samples, h)
    return TimeSignal(out, x.sample_rate)


def add_noise_at_snr(clean: TimeSignal, snr_db: float, seed: int) -> TimeSignal:
    """Add white Gaussian noise so that ``20 log10(|clean| / |noise|) == snr_db``.

    The noise realization is rescaled so the ratio holds exactly for the drawn
    samples, not only in expectation.  ``snr_db = inf`` returns ``clean``.
    """
    clean = _as_signal(clean)
    power = np.linalg.norm(clean.samples)
    if power == 0:
        raise ValueError("SNR is undefined for an all-zero signal")
    if np.isposinf(snr_db):
        return clean
    rng = np.random.default_rng(seed)
    e = rng.standard_normal(len(clean))
    e *= power / (np.linalg.norm(e) * 10 ** (snr_db / 20))
    return TimeSignal(clean.samples + e, clean.sample_rate)


def hann_window(window_len: int) -> np.ndarray:
    """Periodic Hann window (constant overlap-add at 50% hop)."""
    n = np.arange(window_len)
    return 0.5 - 0.5 * np.cos(2 * np.pi * n / window_len)


def frame_count(n_samples: int, window_len: int, hop: int) -> int:
    if n_samples <= window_len:
        return 1
    return int(np.ceil((n_samples - window_len) / hop)) + 1


def stft(x: TimeSignal, window_len: int, hop: int | None = None) -> ComplexSpectrogram:
    """Hann-windowed one-sided STFT.

    Parameters
    ----------
    x : TimeSignal
    window_len : int
        Frame length in samples, must be even.
    hop : int, optional
        Hop size in samples, defaults to ``window_len // 2``.

    Returns
    -------
    ComplexSpectrogram
        ``window_len // 2 + 1`` bins by ``ceil((len - window_len) / hop) + 1``
        frames.  Signals shorter than one window give a single frame.
    """
    x = _as_signal(x)
    if hop is None:
        hop = window_len // 2
    if window_len <= 0 or window_len % 2:
        raise ValueError("window_len must be a positive even integer")
    if not 0 < hop <= window_len:
        raise ValueError("hop must be in (0, window_len]")
    n_frames = frame_count(len(x), window_len, hop)
    padded = np.zeros((n_frames - 1) * hop + window_len)
    padded[: len(x)] = x.samples
    frames = np.lib.stride_tricks.sliding_window_view(padded, window_len)[::hop]
    bins = np.fft.rfft(frames * hann_window(window_len), axis=1).T
    freq_axis = np.arange(window_len // 2 + 1) * x.sample_rate / window_len
    return ComplexSpectrogram(np.ascontiguousarray(bins), freq_axis, hop, window_len)


def magnitude(s: ComplexSpectrogram) -> MagSpectrogram:
    return MagSpectrogram(np.abs(s.bins), s.freq_axis, s.frame_hop, s.window_len)


def empirical_psd(s: ComplexSpectrogram) -> np.ndarray:
    """Per-bin mean of ``|Y|^2`` over frames."""
    if s.n_frames < 1:
        raise ValueError("need at least one frame")
    return np.mean(np.abs(s.bins) ** 2, axis=1)


def read_wav(path) -> TimeSignal:
    """Read a mono PCM16 or float32 WAV file into a :class:`TimeSignal`."""
    rate, data = wavfile.read(Path(path))
    if data.ndim != 1:
        raise ValueError(f"{path}: expected a mono file, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    return TimeSignal(samples, rate)


def write_wav(path, x: TimeSignal, fmt: str = "float32") -> None:
    """Write ``x`` as a float32 or PCM16 (clipped) WAV file."""
    if fmt == "float32":
        data = x.samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.round(np.clip(x.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    else:
        raise ValueError("fmt must be 'float32' or 'pcm16'")
    wavfile.write(Path(path), x.sample_rate, data)
