"""Directional response sets: the magnitude signature a scatterer imprints
on each direction of arrival.

Synthetic devices are log-normal random fields over (direction, frequency),
smoothed with Gaussian kernels.  Each direction also gets a minimum-phase
impulse response whose DFT magnitude reproduces the stored row, so mixtures
can be rendered by time-domain convolution instead of spectral products.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "DirectionalResponseSet",
    "BandSelection",
    "NarrowbandWarning",
    "dtft_magnitude",
    "minimum_phase_ir",
    "from_impulse_responses",
    "synth_rough_scatterer",
    "synth_smooth_scatterer",
    "band_select",
    "interpolate_to_grid",
    "uniform_azimuths",
    "stft_freq_axis",
]

CONSISTENCY_RTOL = 1e-9


class NarrowbandWarning(UserWarning):
    """Impulse response longer than the analysis window."""


def uniform_azimuths(n_directions: int) -> np.ndarray:
    return np.arange(n_directions) * (360.0 / n_directions)


def stft_freq_axis(sample_rate: int, window_len: int) -> np.ndarray:
    return np.arange(window_len // 2 + 1) * sample_rate / window_len


def dtft_magnitude(ir, window_len: int) -> np.ndarray:
    """|H| of ``ir`` sampled on the ``window_len``-point one-sided DFT grid.

    Responses longer than the window are folded (time-aliased), which is
    exactly the DTFT evaluated at the grid frequencies.
    """
    ir = np.asarray(ir, dtype=float)
    if ir.size > window_len:
        n_blocks = -(-ir.size // window_len)
        ir = np.pad(ir, (0, n_blocks * window_len - ir.size)).reshape(n_blocks, window_len).sum(0)
    return np.abs(np.fft.rfft(ir, n=window_len))


def minimum_phase_ir(mag, n_fft: int) -> np.ndarray:
    """Length-``n_fft`` minimum-phase impulse response with magnitude ``mag``.

    Uses the folded real cepstrum, so ``|rfft(ir)|`` equals ``mag`` to
    rounding error.
    """
    mag = np.asarray(mag, dtype=float)
    if mag.shape != (n_fft // 2 + 1,):
        raise ValueError("mag must have n_fft // 2 + 1 entries")
    cep = np.fft.irfft(np.log(np.maximum(mag, 1e-12)), n_fft)
    fold = np.zeros(n_fft)
    half = n_fft // 2
    fold[0] = cep[0]
    fold[1:half] = 2 * cep[1:half]
    fold[half] = cep[half]
    return np.fft.irfft(np.exp(np.fft.rfft(fold)), n_fft)


@dataclass(frozen=True)
class BandSelection:
    """Bins of an STFT grid with ``fmin <= f <= fmax``."""

    fmin: float
    fmax: float
    bin_indices: np.ndarray

    def __post_init__(self):
        if len(self.bin_indices) == 0:
            raise ValueError("band selection is empty")

    @classmethod
    def from_axis(cls, freq_axis, fmin: float, fmax: float) -> "BandSelection":
        freq_axis = np.asarray(freq_axis, dtype=float)
        if fmin > fmax:
            raise ValueError(f"fmin ({fmin}) exceeds fmax ({fmax})")
        idx = np.flatnonzero((freq_axis >= fmin) & (freq_axis <= fmax))
        if idx.size == 0:
            raise ValueError(f"no bins between {fmin} and {fmax} Hz")
        return cls(float(fmin), float(fmax), idx)

    def __len__(self):
        return len(self.bin_indices)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Select the band's rows of an (F, ...) array."""
        return np.asarray(values)[self.bin_indices]


@dataclass(frozen=True)
class DirectionalResponseSet:
    """Per-direction magnitude responses ``mags[d, f] = |H_d(f)|``.

    ``freq_axis`` may be a subset of the full STFT grid (after band selection);
    impulse responses, when present, always refer to the full grid given by
    ``sample_rate`` and ``window_len``.
    """

    azimuths_deg: np.ndarray
    mags: np.ndarray
    freq_axis: np.ndarray
    sample_rate: int
    window_len: int
    impulse_responses: tuple | None = None
    label: str = ""

    def __post_init__(self):
        az = np.asarray(self.azimuths_deg, dtype=float)
        mags = np.asarray(self.mags, dtype=float)
        freqs = np.asarray(self.freq_axis, dtype=float)
        if az.ndim != 1 or az.size < 1:
            raise ValueError("need at least one direction")
        if np.any(az < 0) or np.any(az >= 360) or np.any(np.diff(az) <= 0):
            raise ValueError("azimuths must be strictly increasing in [0, 360)")
        if mags.shape != (az.size, freqs.size):
            raise ValueError(f"mags shape {mags.shape} != ({az.size}, {freqs.size})")
        if not np.all(np.isfinite(mags)) or np.any(mags < 0):
            raise ValueError("mags must be finite and non-negative")
        object.__setattr__(self, "azimuths_deg", az)
        object.__setattr__(self, "mags", mags)
        object.__setattr__(self, "freq_axis", freqs)
        if self.impulse_responses is not None:
            irs = tuple(np.asarray(h, dtype=float) for h in self.impulse_responses)
            if len(irs) != az.size:
                raise ValueError("one impulse response per direction required")
            object.__setattr__(self, "impulse_responses", irs)
            self.check_consistency()

    @property
    def n_directions(self) -> int:
        return self.azimuths_deg.size

    @property
    def n_bins(self) -> int:
        return self.freq_axis.size

    @property
    def power(self) -> np.ndarray:
        """Squared magnitudes, shape (D, F)."""
        return self.mags**2

    @property
    def grid_bins(self) -> np.ndarray:
        """Index of each ``freq_axis`` entry on the full STFT grid."""
        return np.rint(self.freq_axis * self.window_len / self.sample_rate).astype(int)

    def check_consistency(self, rtol: float = CONSISTENCY_RTOL) -> None:
        """Raise if ``mags`` disagree with the stored impulse responses."""
        if self.impulse_responses is None:
            return
        bins = self.grid_bins
        for d, h in enumerate(self.impulse_responses):
            ref = dtft_magnitude(h, self.window_len)[bins]
            scale = max(np.max(ref), np.finfo(float).tiny)
            if np.max(np.abs(ref - self.mags[d])) > rtol * scale:
                raise ValueError(
                    f"mags of direction {self.azimuths_deg[d]} deg disagree with its impulse response"
                )

    def index_of(self, azimuth_deg: float, atol: float = 1e-6) -> int:
        """Index of an azimuth that must lie on the grid."""
        dist = np.abs((self.azimuths_deg - azimuth_deg + 180) % 360 - 180)
        i = int(np.argmin(dist))
        if dist[i] > atol:
            raise ValueError(f"azimuth {azimuth_deg} deg is not on the grid")
        return i


def from_impulse_responses(
    irs, azimuths_deg, sample_rate: int, window_len: int, max_ir_len: int | None = None, label: str = ""
) -> DirectionalResponseSet:
    """Build a response set from measured impulse responses.

    Responses longer than ``max_ir_len`` (default ``window_len``) trigger a
    :class:`NarrowbandWarning`; they are kept as-is.
    """
    irs = [np.asarray(h, dtype=float).ravel() for h in irs]
    az = np.mod(np.asarray(azimuths_deg, dtype=float), 360.0)
    if len(irs) != az.size:
        raise ValueError("need one impulse response per azimuth")
    if any(h.size == 0 for h in irs):
        raise ValueError("empty impulse response")
    limit = window_len if max_ir_len is None else max_ir_len
    longest = max(h.size for h in irs)
    if longest > limit:
        warnings.warn(
            f"impulse responses up to {longest} samples exceed {limit}; "
            "the narrowband approximation will be degraded",
            NarrowbandWarning,
            stacklevel=2,
        )
    order = np.argsort(az, kind="stable")
    irs = [irs[i] for i in order]
    mags = np.stack([dtft_magnitude(h, window_len) for h in irs])
    return DirectionalResponseSet(
        az[order], mags, stft_freq_axis(sample_rate, window_len), sample_rate, window_len, tuple(irs), label
    )


def _gaussian_transfer(n: int, sigma_samples: float) -> np.ndarray:
    k = np.fft.fftfreq(n)
    if np.isinf(sigma_samples):
        return (k == 0).astype(float)
    return np.exp(-2 * (np.pi * sigma_samples * k) ** 2)


def _smooth_log_field(rng, n_dir: int, n_freq: int, sigma_dir: float, sigma_freq: float) -> np.ndarray:
    """Unit-variance Gaussian field, circular along directions.

    ``sigma_*`` are correlation lengths in grid samples: the field's
    autocorrelation is ``exp(-lag^2 / (2 sigma^2))``.
    """
    n_pad = 2 * n_freq
    noise = rng.standard_normal((n_dir, n_pad))
    g_dir = _gaussian_transfer(n_dir, sigma_dir / np.sqrt(2))
    g_freq = _gaussian_transfer(n_pad, sigma_freq / np.sqrt(2))
    spec = np.fft.fft2(noise) * g_dir[:, None] * g_freq[None, :]
    field = np.real(np.fft.ifft2(spec))[:, :n_freq]
    # stationary variance of filtered unit white noise
    var = np.mean(g_dir**2) * np.mean(g_freq**2)
    return field / np.sqrt(var)


def _synth(n_directions, freq_axis, flat_below_hz, roughness_freq, roughness_dir, depth_db, seed, label):
    freq_axis = np.asarray(freq_axis, dtype=float)
    n_freq = freq_axis.size
    window_len = 2 * (n_freq - 1)
    sample_rate = int(round(2 * freq_axis[-1]))
    if n_directions < 1:
        raise ValueError("need at least one direction")
    if not 0 <= flat_below_hz < freq_axis[-1]:
        raise ValueError("flat_below_hz must lie in [0, max(freq_axis))")
    df = freq_axis[1] - freq_axis[0]
    dtheta = 360.0 / n_directions
    rng = np.random.default_rng(seed)
    field = _smooth_log_field(rng, n_directions, n_freq, roughness_dir / dtheta, roughness_freq / df)
    mags = np.exp(field * depth_db * np.log(10) / 20)
    mags[:, freq_axis < flat_below_hz] = 1.0
    irs = tuple(minimum_phase_ir(m, window_len) for m in mags)
    return DirectionalResponseSet(
        uniform_azimuths(n_directions), mags, freq_axis, sample_rate, window_len, irs, label
    )


def synth_rough_scatterer(
    n_directions: int,
    freq_axis,
    flat_below_hz: float = 1500.0,
    roughness_freq: float = 60.0,
    roughness_dir: float = 15.0,
    depth_db: float = 5.0,
    seed: int = 0,
) -> DirectionalResponseSet:
    """Random-like scatterer standing in for an ad hoc brick structure.

    Parameters
    ----------
    n_directions : int
        Evenly spaced directions on [0, 360).  Generate on the finest grid
        needed and subsample with :func:`interpolate_to_grid`.
    freq_axis : array
        One-sided STFT grid, ``0 .. sample_rate / 2``.
    flat_below_hz : float
        Bins below this frequency are exactly 1 (small scatterers leave low
        frequencies untouched).
    roughness_freq, roughness_dir : float
        Correlation lengths of the log-magnitude field in Hz and degrees.
        ``np.inf`` makes the field constant along that axis.
    depth_db : float
        Standard deviation of ``20 log10 |H|`` above the cutoff.
    seed : int
    """
    return _synth(n_directions, freq_axis, flat_below_hz, roughness_freq, roughness_dir, depth_db, seed, "rough")


def synth_smooth_scatterer(
    n_directions: int,
    freq_axis,
    seed: int = 0,
    flat_below_hz: float = 300.0,
    roughness_freq: float = 1500.0,
    roughness_dir: float = 120.0,
    depth_db: float = 6.0,
) -> DirectionalResponseSet:
    """HRTF-like set whose responses vary slowly across directions."""
    if roughness_dir < 90:
        raise ValueError("smooth scatterers need roughness_dir >= 90 degrees")
    return _synth(n_directions, freq_axis, flat_below_hz, roughness_freq, roughness_dir, depth_db, seed, "smooth")


def band_select(rset: DirectionalResponseSet, fmin: float, fmax: float):
    """Restrict a set to ``fmin <= f <= fmax``.

    Returns the restricted set and the :class:`BandSelection` relative to the
    set's current ``freq_axis`` (use it to align spectrogram rows).
    """
    band = BandSelection.from_axis(rset.freq_axis, fmin, fmax)
    restricted = replace(rset, mags=rset.mags[:, band.bin_indices], freq_axis=rset.freq_axis[band.bin_indices])
    return restricted, band


def interpolate_to_grid(rset: DirectionalResponseSet, target_azimuths_deg) -> DirectionalResponseSet:
    """Nearest-neighbour (circular) resampling of the direction grid.

    Targets that coincide with source azimuths are selected exactly, so
    subsampling a fine grid gives a coarse model grid without ever mixing
    rows.
    """
    target = np.asarray(target_azimuths_deg, dtype=float)
    if np.any(target < 0) or np.any(target >= 360):
        raise ValueError("target azimuths must lie in [0, 360)")
    dist = np.abs((target[:, None] - rset.azimuths_deg[None, :] + 180) % 360 - 180)
    idx = np.argmin(dist, axis=1)
    irs = None
    if rset.impulse_responses is not None:
        irs = tuple(rset.impulse_responses[i] for i in idx)
    return replace(rset, azimuths_deg=target, mags=rset.mags[idx], impulse_responses=irs)
