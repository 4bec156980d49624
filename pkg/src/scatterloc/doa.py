"""Direction-of-arrival estimation by NMF, with optional multiresolution
refinement on a finer grid around the best coarse candidates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nmf import Activations, Dictionary, SolverConfig, build_mixing_matrix, factorize
from .scatter import BandSelection, DirectionalResponseSet, interpolate_to_grid, stft_freq_axis
from .signal import TimeSignal, magnitude, stft

__all__ = ["DoAResult", "MultiresConfig", "score_groups", "top_directions", "localize", "refine", "observe"]


@dataclass
class DoAResult:
    estimates_deg: list
    group_energies: np.ndarray
    azimuths_deg: np.ndarray
    stage: str = "coarse"
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))
    coarse: "DoAResult | None" = None

    def __post_init__(self):
        if self.stage not in ("coarse", "refined"):
            raise ValueError("stage must be 'coarse' or 'refined'")


@dataclass(frozen=True)
class MultiresConfig:
    """Refinement settings.

    ``R`` neighbours per candidate sit at ``+-fine_step_deg * (1 .. R/2)``,
    so the default ``R = 4`` with a 2 degree step probes +-2 and +-4 degrees.
    """

    T: int = 7
    fine_step_deg: float = 2.0
    R: int = 4
    lam: float | None = None
    gamma: float | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.R < 0 or self.R % 2:
            raise ValueError("R must be a non-negative even integer")
        if self.fine_step_deg <= 0:
            raise ValueError("fine_step_deg must be positive")

    def offsets(self) -> np.ndarray:
        k = np.arange(1, self.R // 2 + 1) * self.fine_step_deg
        return np.concatenate([[0.0], np.ravel(np.column_stack([-k, k]))])

    def solver(self, cfg: SolverConfig) -> SolverConfig:
        from dataclasses import replace

        return replace(
            cfg,
            lam=cfg.lam if self.lam is None else self.lam,
            gamma=cfg.gamma if self.gamma is None else self.gamma,
        )


def score_groups(X: Activations) -> np.ndarray:
    """l1 norm of each direction group of X."""
    return X.values.reshape(X.D, -1).sum(axis=1)


def top_directions(energies, azimuths_deg, J: int) -> np.ndarray:
    """Indices of the J largest energies, ties going to the smaller azimuth."""
    energies = np.asarray(energies, dtype=float)
    order = np.lexsort((np.asarray(azimuths_deg, dtype=float), -energies))
    return order[:J]


def observe(y: TimeSignal, device: DirectionalResponseSet, band: BandSelection | None = None) -> np.ndarray:
    """Magnitude spectrogram of ``y`` on the device's STFT grid, band-limited."""
    if y.sample_rate != device.sample_rate:
        raise ValueError("signal and device sample rates differ")
    Y = magnitude(stft(y, device.window_len, device.window_len // 2)).values
    if band is not None:
        Y = band.apply(Y)
    return Y


def _restrict(device: DirectionalResponseSet, freqs: np.ndarray) -> DirectionalResponseSet:
    if device.n_bins == freqs.size and np.allclose(device.freq_axis, freqs):
        return device
    from dataclasses import replace

    idx = np.rint(freqs * device.window_len / device.sample_rate).astype(int)
    full = np.rint(device.freq_axis * device.window_len / device.sample_rate).astype(int)
    pos = np.searchsorted(full, idx)
    if np.any(pos >= full.size) or np.any(full[np.minimum(pos, full.size - 1)] != idx):
        raise ValueError("device does not cover the requested band")
    return replace(device, mags=device.mags[:, pos], freq_axis=device.freq_axis[pos])


def _solve(Y, device, W, J, cfg, init, seed, stage):
    A = build_mixing_matrix(device, W)
    X = factorize(Y, A, cfg, init=init, seed=seed)
    energies = score_groups(X)
    idx = top_directions(energies, device.azimuths_deg, J)
    est = [float(device.azimuths_deg[i]) for i in idx]
    return DoAResult(est, energies, device.azimuths_deg.copy(), stage, X.objective_trace)


def localize(
    y: TimeSignal,
    device: DirectionalResponseSet,
    W: Dictionary,
    J: int,
    cfg: SolverConfig,
    band: BandSelection | None = None,
    multires: MultiresConfig | None = None,
    fine_device: DirectionalResponseSet | None = None,
    init: str = "ATY",
    seed: int | None = None,
) -> DoAResult:
    """Estimate J azimuths of the sources in ``y``.

    Parameters
    ----------
    y : TimeSignal
    device : DirectionalResponseSet
        Model-grid responses (full STFT grid or already band-limited).
    W : Dictionary
        Source model; rows are aligned to the band by frequency when it
        carries a frequency axis.
    J : int
    cfg : SolverConfig
    band : BandSelection, optional
        Selection on the full STFT grid.
    multires : MultiresConfig, optional
        Refine the coarse result on ``fine_device`` (required then).  The
        refined result keeps the coarse one in its ``coarse`` attribute.
    init, seed
        Forwarded to :func:`scatterloc.nmf.factorize`.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    if J > device.n_directions:
        raise ValueError(f"J = {J} exceeds the {device.n_directions} model directions")
    if multires is not None and fine_device is None:
        raise ValueError("multiresolution needs a fine response set")
    Y = observe(y, device, band)
    freqs = stft_freq_axis(device.sample_rate, device.window_len)
    if band is not None:
        freqs = band.apply(freqs)
    model = _restrict(device, freqs)
    Wb = W.restrict(freqs)
    coarse = _solve(Y, model, Wb, J, cfg, init, seed, "coarse")
    if multires is None:
        return coarse
    refined = refine(coarse, Y, _restrict(fine_device, freqs), Wb, J, multires, cfg, init, seed)
    refined.coarse = coarse
    return refined


def refine_azimuths(coarse: DoAResult, multires: MultiresConfig) -> np.ndarray:
    """Sorted unique fine azimuths around the T best coarse candidates."""
    T = min(multires.T, coarse.azimuths_deg.size)
    cand = coarse.azimuths_deg[top_directions(coarse.group_energies, coarse.azimuths_deg, T)]
    fine = np.mod(cand[:, None] + multires.offsets()[None, :], 360.0)
    return np.unique(np.round(fine.ravel(), 9))


def refine(
    coarse: DoAResult,
    Y: np.ndarray,
    fine_device: DirectionalResponseSet,
    W: Dictionary,
    J: int,
    multires: MultiresConfig,
    cfg: SolverConfig,
    init: str = "ATY",
    seed: int | None = None,
) -> DoAResult:
    """Re-solve with one mixing matrix over all candidates' fine neighbours.

    ``Y`` and ``fine_device`` must already share rows with ``W``.
    """
    if multires.T < J:
        raise ValueError("T must be at least J")
    az = refine_azimuths(coarse, multires)
    for a in az:
        fine_device.index_of(a)  # raises if the neighbour is missing
    sub = interpolate_to_grid(fine_device, az)
    return _solve(Y, sub, W, J, multires.solver(cfg), init, seed, "refined")
