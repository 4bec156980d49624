"""Scene rendering and a synthetic source corpus.

Sources are rendered by convolving with each direction's impulse response in
the time domain, so the spectral product model used by the localizers is
only an approximation of the data they see.

The ``harmonic-speaker`` generator is a crude voiced-speech stand-in: a
harmonic series on a wandering f0 contour, shaped by a sequence of shared
vowel envelopes plus a speaker-specific deviation, with syllabic amplitude
modulation and interleaved fricative noise bursts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .scatter import DirectionalResponseSet
from .signal import TimeSignal, add_noise_at_snr

__all__ = [
    "SourceSpec",
    "Scene",
    "FEMALE_F0_RANGE",
    "MALE_F0_RANGE",
    "make_source",
    "make_speaker_spec",
    "render_mixture",
    "random_scene",
    "scenes_to_json",
    "scenes_from_json",
]

SOURCE_KINDS = ("white", "prototype-colored", "harmonic-speaker")
FEMALE_F0_RANGE = (165.0, 255.0)
MALE_F0_RANGE = (85.0, 155.0)
FEMALE_TILT_RANGE = (-5.0, -3.0)
MALE_TILT_RANGE = (-7.0, -5.0)

# (frequency Hz, gain dB) of five formants per vowel template, adult male scale
_VOWELS = np.array(
    [
        [(730, 0), (1090, -4), (2440, -12), (3400, -16), (4500, -20)],
        [(270, 0), (2290, -10), (3010, -12), (3700, -16), (4900, -20)],
        [(530, 0), (1840, -6), (2480, -10), (3500, -15), (4700, -20)],
        [(300, 0), (870, -6), (2240, -16), (3300, -18), (4400, -22)],
        [(660, 0), (1720, -4), (2410, -10), (3600, -14), (5000, -18)],
        [(570, 0), (840, -4), (2410, -16), (3450, -18), (4600, -22)],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class SourceSpec:
    """Recipe for a synthetic source.

    ``voice_seed`` fixes the speaker identity of a harmonic speaker (formant
    scale and envelope deviation) while ``seed`` draws the utterance; it
    defaults to ``seed``.
    """

    kind: str
    duration_s: float
    seed: int
    f0: float | None = None
    tilt: float | None = None
    voice_seed: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if not self.duration_s > 0:
            raise ValueError("duration must be positive")
        if self.kind == "harmonic-speaker" and (self.f0 is None or self.f0 <= 0):
            raise ValueError("harmonic-speaker needs a positive f0")

    def to_dict(self) -> dict:
        return asdict(self)


def make_speaker_spec(gender: str, speaker_seed: int, utterance_seed: int, duration_s: float) -> SourceSpec:
    """Draw a female- or male-like speaker and one utterance of it."""
    if gender not in ("female", "male"):
        raise ValueError("gender must be 'female' or 'male'")
    rng = np.random.default_rng([speaker_seed, 0xF0])
    f0_range, tilt_range = (
        (FEMALE_F0_RANGE, FEMALE_TILT_RANGE) if gender == "female" else (MALE_F0_RANGE, MALE_TILT_RANGE)
    )
    return SourceSpec(
        "harmonic-speaker",
        duration_s,
        utterance_seed,
        f0=float(rng.uniform(*f0_range)),
        tilt=float(rng.uniform(*tilt_range)),
        voice_seed=speaker_seed,
        label=f"{gender}-{speaker_seed}",
    )


def _smooth_noise(rng, n: int, corr: float) -> np.ndarray:
    """Unit-variance Gaussian process with squared-exponential correlation ``corr`` samples."""
    k = np.fft.rfftfreq(2 * n)
    g = np.exp(-2 * (np.pi * corr / np.sqrt(2) * k) ** 2)
    out = np.fft.irfft(np.fft.rfft(rng.standard_normal(2 * n)) * g, 2 * n)[:n]
    return out / np.sqrt(np.sum(g[1:] ** 2) * 2 / (2 * n) + g[0] ** 2 / (2 * n))


def _shape_noise(rng, n: int, sample_rate: int, gain_db) -> np.ndarray:
    """White noise shaped by ``gain_db(freq)`` through FFT filtering."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1 / sample_rate)
    return np.fft.irfft(spec * 10 ** (gain_db(freqs) / 20), n)


def _segments(rng, n_ctrl: int, ctrl_rate: float):
    """Random segment sequence: list of (start, stop, kind, vowel)."""
    segs, pos = [], 0
    while pos < n_ctrl:
        length = max(1, int(rng.uniform(0.06, 0.18) * ctrl_rate))
        u = rng.uniform()
        kind = "voiced" if u < 0.72 else ("fricative" if u < 0.9 else "pause")
        segs.append((pos, min(n_ctrl, pos + length), kind, int(rng.integers(len(_VOWELS)))))
        pos += length
    return segs


def _crossfade(weights: np.ndarray, width: int) -> np.ndarray:
    """Smooth piecewise-constant control tracks along the last axis."""
    if width < 2:
        return weights
    kernel = np.hanning(width + 2)[1:-1]
    kernel /= kernel.sum()
    pad = width // 2
    padded = np.pad(weights, [(0, 0)] * (weights.ndim - 1) + [(pad, width - 1 - pad)], mode="edge")
    out = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="valid"), -1, padded)
    return out


def _harmonic_speaker(spec: SourceSpec, sample_rate: int) -> np.ndarray:
    n = int(round(spec.duration_s * sample_rate))
    rng = np.random.default_rng([spec.seed, 0x5E])
    vrng = np.random.default_rng([spec.seed if spec.voice_seed is None else spec.voice_seed, 0x70])
    nyq = sample_rate / 2
    f0 = spec.f0
    tilt = -4.0 if spec.tilt is None else spec.tilt

    # speaker identity: vocal tract scale and a smooth envelope deviation
    scale = 0.95 + 0.25 * np.clip((f0 - 85.0) / 170.0, 0, 1) + vrng.uniform(-0.03, 0.03)
    dev_grid = np.linspace(0, nyq, 257)
    deviation = 3.0 * _smooth_noise(vrng, dev_grid.size, 800.0 / (dev_grid[1] - dev_grid[0]))
    fric_center = vrng.uniform(4000, 6500)

    ctrl_rate = 500.0
    hop = sample_rate / ctrl_rate
    n_ctrl = int(np.ceil(n / hop)) + 2
    t_ctrl = np.arange(n_ctrl) / ctrl_rate
    segs = _segments(rng, n_ctrl, ctrl_rate)

    vowel_w = np.zeros((len(_VOWELS), n_ctrl))
    voiced = np.zeros(n_ctrl)
    fric = np.zeros(n_ctrl)
    for a, b, kind, v in segs:
        vowel_w[v, a:b] = 1.0
        voiced[a:b] = kind == "voiced"
        fric[a:b] = kind == "fricative"
    width = int(0.03 * ctrl_rate)
    vowel_w = _crossfade(vowel_w, width)
    voiced = _crossfade(voiced[None], width)[0]
    fric = _crossfade(fric[None], width)[0]

    # f0 contour: slow intonation drift plus a little vibrato
    drift = _smooth_noise(rng, n_ctrl, 0.4 * ctrl_rate)
    f0_ctrl = f0 * (1 + 0.05 * drift + 0.01 * np.sin(2 * np.pi * rng.uniform(4, 6) * t_ctrl))
    syll = 0.4 + 0.6 * (0.5 - 0.5 * np.cos(2 * np.pi * rng.uniform(3, 6) * t_ctrl + rng.uniform(0, 2 * np.pi)))

    n_harm = int(0.95 * nyq / (f0 * 1.08))
    h = np.arange(1, n_harm + 1)[:, None]
    freqs = h * f0_ctrl[None, :]
    env = np.zeros_like(freqs)
    for v, formants in enumerate(_VOWELS):
        lv = np.zeros_like(freqs)
        for fc, gain in formants:
            fc = fc * scale
            bw = 120 + 0.12 * fc
            lv += 10 ** (gain / 20) * np.exp(-0.5 * ((freqs - fc) / bw) ** 2)
        env += vowel_w[v] * 20 * np.log10(lv + 10 ** (-30 / 20))
    env += tilt * np.log2(np.maximum(freqs, 50.0) / 200.0)
    env += np.interp(freqs, dev_grid, deviation)
    amp = 10 ** (env / 20) * (voiced * syll)[None, :]
    amp[freqs >= 0.95 * nyq] = 0.0

    t_idx = np.arange(n) / hop
    k0 = np.minimum(t_idx.astype(int), n_ctrl - 2)
    frac = t_idx - k0
    f0_s = f0_ctrl[k0] * (1 - frac) + f0_ctrl[k0 + 1] * frac
    phase = 2 * np.pi * np.cumsum(f0_s) / sample_rate
    amp_s = amp[:, k0] * (1 - frac) + amp[:, k0 + 1] * frac
    offsets = rng.uniform(0, 2 * np.pi, n_harm)[:, None]
    voiced_sig = np.sum(amp_s * np.sin(h * phase[None, :] + offsets), axis=0)

    def fric_gain(fq):
        return tilt * 0.5 * np.log2(np.maximum(fq, 50.0) / 200.0) - 0.5 * ((fq - fric_center) / 2500.0) ** 2 * 6

    fric_sig = _shape_noise(rng, n, sample_rate, fric_gain)
    fric_sig *= 0.5 * np.std(voiced_sig) / max(np.std(fric_sig), 1e-12)
    fric_env = fric * syll
    breath = 0.02 * np.std(voiced_sig) * rng.standard_normal(n)
    return voiced_sig + fric_sig * (fric_env[k0] * (1 - frac) + fric_env[k0 + 1] * frac) + breath


def _prototype_colored(spec: SourceSpec, sample_rate: int) -> np.ndarray:
    n = int(round(spec.duration_s * sample_rate))
    rng = np.random.default_rng([spec.seed, 0xC0])
    grid = np.linspace(0, sample_rate / 2, 129)
    env_db = 8.0 * _smooth_noise(rng, grid.size, 6.0)
    return _shape_noise(rng, n, sample_rate, lambda fq: np.interp(fq, grid, env_db))


def make_source(spec: SourceSpec, sample_rate: int = 16000) -> TimeSignal:
    """Generate the waveform described by ``spec`` (deterministic per seed)."""
    if spec.kind == "white":
        n = int(round(spec.duration_s * sample_rate))
        samples = np.random.default_rng(spec.seed).standard_normal(n)
    elif spec.kind == "prototype-colored":
        samples = _prototype_colored(spec, sample_rate)
    else:
        samples = _harmonic_speaker(spec, sample_rate)
    return TimeSignal(samples, sample_rate)


@dataclass
class Scene:
    """Sources placed on the fine direction grid plus the noise setting."""

    sources: list
    snr_db: float
    seed: int
    specs: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.sources) < 1:
            raise ValueError("a scene needs at least one source")
        az = [float(a) % 360 for a, _ in self.sources]
        if len(set(az)) != len(az):
            raise ValueError("source azimuths must be distinct")
        rates = {s.sample_rate for _, s in self.sources}
        if len(rates) != 1:
            raise ValueError("all sources must share a sample rate")
        self.sources = [(a, s) for a, (_, s) in zip(az, self.sources)]

    @property
    def azimuths_deg(self) -> list:
        return [a for a, _ in self.sources]

    @property
    def sample_rate(self) -> int:
        return self.sources[0][1].sample_rate

    def to_dict(self) -> dict:
        if self.specs is None:
            raise ValueError("only scenes built from SourceSpecs can be serialized")
        return {
            "azimuths_deg": self.azimuths_deg,
            "sources": [s.to_dict() for s in self.specs],
            "snr_db": self.snr_db if np.isfinite(self.snr_db) else "inf",
            "seed": self.seed,
            "sample_rate": self.sample_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        specs = [SourceSpec(**s) for s in d["sources"]]
        rate = d.get("sample_rate", 16000)
        srcs = [(a, make_source(s, rate)) for a, s in zip(d["azimuths_deg"], specs)]
        return cls(srcs, float(d["snr_db"]), int(d["seed"]), specs)


def render_mixture(scene: Scene, fine_responses: DirectionalResponseSet) -> TimeSignal:
    """Time-domain mixture ``y = sum_j s_j * h(theta_j) + e``.

    Sources are truncated to the shortest one and peak-normalized to 1
    before convolution; the noise follows :func:`add_noise_at_snr` with the
    scene seed.
    """
    if fine_responses.impulse_responses is None:
        raise ValueError("rendering needs a response set with impulse responses")
    if fine_responses.sample_rate != scene.sample_rate:
        raise ValueError("scene and response set sample rates differ")
    n = min(len(s) for _, s in scene.sources)
    irs = [fine_responses.impulse_responses[fine_responses.index_of(a)] for a in scene.azimuths_deg]
    out = np.zeros(n + max(h.size for h in irs) - 1)
    from scipy.signal import fftconvolve

    for (_, s), h in zip(scene.sources, irs):
        x = s.samples[:n]
        peak = np.max(np.abs(x))
        if peak == 0:
            raise ValueError("cannot peak-normalize an all-zero source")
        y = fftconvolve(x / peak, h)
        out[: y.size] += y
    return add_noise_at_snr(TimeSignal(out, scene.sample_rate), scene.snr_db, scene.seed)


def random_scene(
    J: int,
    n_fine: int,
    source_pool: Sequence,
    snr_db: float,
    seed: int,
    sample_rate: int = 16000,
) -> Scene:
    """Draw ``J`` distinct azimuths of an ``n_fine``-direction grid and ``J`` sources.

    Pool entries may be :class:`SourceSpec` (rendered on demand, scene is then
    serializable) or :class:`TimeSignal`.  Sources are drawn without
    replacement when the pool is large enough.
    """
    if not 1 <= J <= n_fine:
        raise ValueError("need 1 <= J <= number of fine directions")
    if len(source_pool) == 0:
        raise ValueError("empty source pool")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n_fine, size=J, replace=False))
    azimuths = idx * (360.0 / n_fine)
    picks = rng.choice(len(source_pool), size=J, replace=len(source_pool) < J)
    chosen = [source_pool[i] for i in picks]
    specs = None
    if all(isinstance(c, SourceSpec) for c in chosen):
        specs = chosen
        chosen = [make_source(c, sample_rate) for c in chosen]
    return Scene(list(zip(azimuths, chosen)), snr_db, int(rng.integers(2**31)), specs)


def scenes_to_json(scenes: Sequence[Scene]) -> str:
    return json.dumps([s.to_dict() for s in scenes], indent=1)


def scenes_from_json(text: str) -> list:
    return [Scene.from_dict(d) for d in json.loads(text)]
