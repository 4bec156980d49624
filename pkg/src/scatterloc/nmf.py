"""Non-negative factorization with a fixed mixing matrix and sparse-group
penalties.

The model is ``Y ~ A X`` where ``A = [diag(H_1) W, ..., diag(H_D) W]`` stacks
one copy of the source dictionary per direction, so ``X`` splits into D
groups of K rows.  We minimize::

    D(Y | AX) + lam * sum_d log(eps_group + |X_d|_1) + gamma * |X|_1

over ``X >= 0`` with multiplicative updates, for the Itakura-Saito
(beta = 0) or Euclidean (beta = 2) data term.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .scatter import BandSelection, DirectionalResponseSet
from .signal import MagSpectrogram

__all__ = [
    "DIVERGENCES",
    "SolverError",
    "Dictionary",
    "MixingMatrix",
    "Activations",
    "SolverConfig",
    "beta_divergence",
    "objective",
    "mu_step",
    "factorize",
    "learn_dictionary",
    "build_mixing_matrix",
]

log = logging.getLogger(__name__)

DIVERGENCES = ("itakura_saito", "euclidean")


class SolverError(RuntimeError):
    """The multiplicative updates produced non-finite values."""


@dataclass(frozen=True)
class Dictionary:
    """Non-negative source dictionary ``atoms`` of shape (F, K)."""

    atoms: np.ndarray
    atom_meta: tuple = ()
    freq_axis: np.ndarray | None = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim != 2:
            raise ValueError("atoms must be a 2-D array")
        if not np.all(np.isfinite(atoms)) or np.any(atoms < 0):
            raise ValueError("atoms must be finite and non-negative")
        if np.any(atoms.sum(axis=0) == 0):
            raise ValueError("dictionary has an all-zero atom")
        meta = tuple(self.atom_meta) if self.atom_meta else ("",) * atoms.shape[1]
        if len(meta) != atoms.shape[1]:
            raise ValueError("one label per atom required")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "atom_meta", meta)
        if self.freq_axis is not None:
            freqs = np.asarray(self.freq_axis, dtype=float)
            if freqs.shape != (atoms.shape[0],):
                raise ValueError("freq_axis must have one entry per row")
            object.__setattr__(self, "freq_axis", freqs)

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[1]

    def restrict(self, freq_axis) -> "Dictionary":
        """Rows matching ``freq_axis`` (requires a stored axis)."""
        freq_axis = np.asarray(freq_axis, dtype=float)
        if self.freq_axis is None:
            if freq_axis.size == self.atoms.shape[0]:
                return self
            raise ValueError("dictionary has no frequency axis to align with")
        if np.array_equal(freq_axis, self.freq_axis):
            return self
        idx = np.searchsorted(self.freq_axis, freq_axis)
        idx = np.minimum(idx, self.freq_axis.size - 1)
        if not np.allclose(self.freq_axis[idx], freq_axis):
            raise ValueError("dictionary grid does not contain the requested frequencies")
        return Dictionary(self.atoms[idx], self.atom_meta, freq_axis)


@dataclass(frozen=True)
class MixingMatrix:
    """``values`` (F, K*D); column ``c`` belongs to direction group ``c // K``."""

    values: np.ndarray
    K: int
    D: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.K * self.D:
            raise ValueError("values must have K * D columns")
        if np.any(values < 0):
            raise ValueError("mixing matrix must be non-negative")
        object.__setattr__(self, "values", values)
        # row-major copy of A^T; X^T A^T beats A X for few, long columns
        object.__setattr__(self, "_transposed", np.ascontiguousarray(values.T))

    @property
    def group_of_column(self) -> np.ndarray:
        return np.arange(self.K * self.D) // self.K


@dataclass
class Activations:
    """Non-negative coefficients (K*D, N) with D groups of K rows."""

    values: np.ndarray
    K: int
    D: int
    objective_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.values.shape[0] != self.K * self.D:
            raise ValueError("values must have K * D rows")

    def group(self, d: int) -> np.ndarray:
        return self.values[d * self.K : (d + 1) * self.K]

    def group_l1(self) -> np.ndarray:
        return self.values.reshape(self.D, -1).sum(axis=1)


@dataclass(frozen=True)
class SolverConfig:
    """Settings of the multiplicative-update solver.

    ``lam`` weights the log/l1 group penalty and ``gamma`` the l1 penalty;
    both are in units of the data term, so they depend on spectrogram
    scaling.  ``tol`` enables early stopping on the relative objective
    change (off by default).
    """

    divergence: str = "itakura_saito"
    lam: float = 0.0
    gamma: float = 0.0
    iters: int = 100
    eps_group: float = 1e-12
    eps_floor: float = 1e-20
    tol: float | None = None

    def __post_init__(self):
        if self.divergence not in DIVERGENCES:
            raise ValueError(f"divergence must be one of {DIVERGENCES}")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("penalty weights must be non-negative")
        if self.iters < 1:
            raise ValueError("iters must be at least 1")
        if self.eps_group <= 0 or self.eps_floor <= 0:
            raise ValueError("eps values must be positive")


def _check_divergence(divergence: str) -> None:
    if divergence not in DIVERGENCES:
        raise ValueError(f"divergence must be one of {DIVERGENCES}")


def beta_divergence(V, V_hat, divergence: str, eps_floor: float = 1e-20) -> float:
    """Sum of entrywise divergences ``D(V | V_hat)``.

    For Itakura-Saito, ``V`` is floored at ``eps_floor`` (the divergence is
    infinite at zero) and a zero in ``V_hat`` is an error.
    """
    _check_divergence(divergence)
    V = np.asarray(V, dtype=float)
    V_hat = np.asarray(V_hat, dtype=float)
    if divergence == "euclidean":
        return 0.5 * float(np.sum((V - V_hat) ** 2))
    if np.any(V_hat <= 0):
        raise ValueError("Itakura-Saito divergence needs a strictly positive model")
    ratio = np.maximum(V, eps_floor) / V_hat
    return float(np.sum(ratio - np.log(ratio) - 1))


def _as_matrix(A) -> MixingMatrix:
    if isinstance(A, MixingMatrix):
        return A
    raise TypeError("expected a MixingMatrix")


def _group_norms(X: np.ndarray, K: int, D: int) -> np.ndarray:
    return X.reshape(D, -1).sum(axis=1)


def objective(Y, A: MixingMatrix, X, cfg: SolverConfig) -> float:
    """Penalized cost of ``X`` for observation ``Y``."""
    A = _as_matrix(A)
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    if Y.shape[0] != A.values.shape[0] or X.shape != (A.values.shape[1], Y.shape[1]):
        raise ValueError("shapes of Y, A and X do not conform")
    V_hat = A.values @ X
    if cfg.divergence == "itakura_saito":
        V_hat = np.maximum(V_hat, cfg.eps_floor)
    data = beta_divergence(Y, V_hat, cfg.divergence, cfg.eps_floor)
    groups = _group_norms(X, A.K, A.D)
    return data + cfg.lam * float(np.sum(np.log(cfg.eps_group + groups))) + cfg.gamma * float(X.sum())


def _penalty_matrix(X: np.ndarray, A: MixingMatrix, cfg: SolverConfig) -> np.ndarray:
    P = 1.0 / (cfg.eps_group + _group_norms(X, A.K, A.D))
    return np.repeat(P, A.K)[:, None]


def _update_ratio(X, A, Y, Y_hat, P, cfg, cols=slice(None)):
    """Multiplicative factor for columns ``cols`` of X."""
    a = A.values
    n = Y[:, cols].shape[1]
    if cfg.divergence == "itakura_saito":
        inv = 1.0 / Y_hat[:, cols]
        # one product for both gradient halves; (Z^T A)^T is faster than A^T Z
        # for the short, wide observations typical here
        G = (np.hstack([Y[:, cols] * inv * inv, inv]).T @ a).T
        num = G[:, :n]
        den = G[:, n:] + cfg.lam * P + cfg.gamma
        ratio = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return np.sqrt(ratio)
    G = (np.hstack([Y[:, cols], Y_hat[:, cols]]).T @ a).T
    num = G[:, :n] - cfg.lam * P - cfg.gamma
    den = G[:, n:]
    ratio = np.divide(num, den, out=np.full_like(num, cfg.eps_floor), where=den > 0)
    return np.maximum(ratio, cfg.eps_floor)


def _model(A: MixingMatrix, X: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    Y_hat = np.ascontiguousarray((X.T @ A._transposed).T)
    if cfg.divergence == "itakura_saito":
        np.maximum(Y_hat, cfg.eps_floor, out=Y_hat)
    return Y_hat


def _step(X, A, Y, Y_hat, cfg, blocks=None, pool=None):
    # overflow surfaces through the finiteness check below
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        return _checked_step(X, A, Y, Y_hat, cfg, blocks, pool)


def _checked_step(X, A, Y, Y_hat, cfg, blocks, pool):
    P = _penalty_matrix(X, A, cfg)
    if blocks is None:
        X_new = X * _update_ratio(X, A, Y, Y_hat, P, cfg)
    else:
        def work(cols):
            return X[:, cols] * _update_ratio(X, A, Y, Y_hat, P, cfg, cols)

        parts = list(pool.map(work, blocks)) if pool is not None else [work(c) for c in blocks]
        X_new = np.concatenate(parts, axis=1)
    if not np.all(np.isfinite(X_new)):
        raise SolverError(
            "multiplicative update produced non-finite values; check eps_floor / eps_group"
        )
    return X_new


def mu_step(X, A: MixingMatrix, Y, cfg: SolverConfig) -> np.ndarray:
    """One multiplicative update of X (non-negativity preserving).

    IS: ``X * (A^T(Y / Yh^2) / (A^T(1 / Yh) + lam P + gamma))^(1/2)``;
    Euclidean: ``X * max((A^T Y - lam P - gamma) / (A^T Yh), eps_floor)``,
    with ``Yh = AX`` and ``P_d = 1 / (eps_group + |X_d|_1)``.
    """
    A = _as_matrix(A)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if cfg.divergence == "itakura_saito":
        Y = np.maximum(Y, cfg.eps_floor)
    return _step(X, A, Y, _model(A, X, cfg), cfg)


def factorize(
    Y,
    A: MixingMatrix,
    cfg: SolverConfig,
    init: str | np.ndarray = "ATY",
    seed: int | None = None,
    column_block: int | None = None,
    n_jobs: int = 1,
) -> Activations:
    """Run ``cfg.iters`` multiplicative updates from a deterministic start.

    Parameters
    ----------
    Y : array (F, N)
        Non-negative observation, rows aligned with ``A``.
    A : MixingMatrix
    cfg : SolverConfig
    init : {"ATY", "random"} or array
        ``"ATY"`` starts from ``A^T Y``; ``"random"`` draws uniform entries
        (seeded) rescaled to the mean of ``A^T Y``.
    column_block : int, optional
        Split the columns of Y into fixed blocks for the update products.
        Results depend on the blocking but not on ``n_jobs``.
    n_jobs : int
        Threads used to process column blocks.

    Returns
    -------
    Activations
        With ``objective_trace`` holding the cost before the first and after
        every update.
    """
    A = _as_matrix(A)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != A.values.shape[0]:
        raise ValueError("Y rows must match the mixing matrix")
    if np.any(Y < 0):
        raise ValueError("Y must be non-negative")
    if cfg.divergence == "itakura_saito":
        Y = np.maximum(Y, cfg.eps_floor)
    X0 = A.values.T @ Y
    if isinstance(init, np.ndarray):
        X = np.array(init, dtype=float)
        if X.shape != X0.shape or np.any(X < 0):
            raise ValueError("initial X must be non-negative with shape (K*D, N)")
    elif init == "ATY":
        X = X0
    elif init == "random":
        rng = np.random.default_rng(seed)
        X = rng.uniform(size=X0.shape)
        X *= X0.mean() / X.mean()
    else:
        raise ValueError("init must be 'ATY', 'random' or an array")

    blocks = None
    if column_block is not None:
        n = Y.shape[1]
        blocks = [slice(a, min(n, a + column_block)) for a in range(0, n, column_block)]
    pool = ThreadPoolExecutor(n_jobs) if blocks is not None and n_jobs > 1 else None

    def model(X):
        if blocks is None:
            return _model(A, X, cfg)
        return np.concatenate([_model(A, X[:, c], cfg) for c in blocks], axis=1)

    def cost(X, Y_hat):
        data = beta_divergence(Y, Y_hat, cfg.divergence, cfg.eps_floor)
        pen = np.log(cfg.eps_group + _group_norms(X, A.K, A.D)).sum()
        return data + cfg.lam * pen + cfg.gamma * X.sum()

    try:
        Y_hat = model(X)
        trace = [cost(X, Y_hat)]
        for _ in range(cfg.iters):
            X = _step(X, A, Y, Y_hat, cfg, blocks, pool)
            Y_hat = model(X)
            trace.append(cost(X, Y_hat))
            if cfg.tol is not None and abs(trace[-2] - trace[-1]) <= cfg.tol * abs(trace[-2]):
                break
    finally:
        if pool is not None:
            pool.shutdown()
    return Activations(X, A.K, A.D, np.asarray(trace))


def build_mixing_matrix(responses: DirectionalResponseSet, W: Dictionary) -> MixingMatrix:
    """``[diag(|H_1|) W, ..., diag(|H_D|) W]``."""
    if W.atoms.shape[0] != responses.n_bins:
        raise ValueError(
            f"dictionary has {W.atoms.shape[0]} rows but the response set has {responses.n_bins} bins"
        )
    if W.freq_axis is not None and not np.allclose(W.freq_axis, responses.freq_axis):
        raise ValueError("dictionary and response set frequency grids differ")
    F, K = W.atoms.shape
    D = responses.n_directions
    values = (responses.mags[:, :, None] * W.atoms[None, :, :]).transpose(1, 0, 2).reshape(F, D * K)
    return MixingMatrix(values, K, D)


def _nmf(V, K, divergence, iters, rng, eps=1e-12):
    """Plain MU NMF updating both factors; columns of W kept at unit l2 norm."""
    F, N = V.shape
    scale = np.sqrt(V.mean() / K)
    W = rng.uniform(0.1, 1.0, size=(F, K)) * scale
    H = rng.uniform(0.1, 1.0, size=(K, N)) * scale
    for _ in range(iters):
        V_hat = W @ H + eps
        if divergence == "euclidean":
            H *= (W.T @ V) / (W.T @ V_hat + eps)
            V_hat = W @ H + eps
            W *= (V @ H.T) / (V_hat @ H.T + eps)
        else:
            H *= (W.T @ (V / V_hat**2)) / (W.T @ (1 / V_hat) + eps)
            V_hat = W @ H + eps
            W *= ((V / V_hat**2) @ H.T) / ((1 / V_hat) @ H.T + eps)
        norms = np.linalg.norm(W, axis=0) + eps
        W /= norms
        H *= norms[:, None]
    return W, H


def learn_dictionary(
    training: Sequence,
    K_per_speaker: int,
    divergence: str = "itakura_saito",
    iters: int = 200,
    seed: int = 0,
    band: BandSelection | None = None,
) -> Dictionary:
    """Learn a universal source model by per-speaker NMF.

    Parameters
    ----------
    training : sequence of (label, MagSpectrogram)
        Spectrograms sharing a speaker label are concatenated in time.
    K_per_speaker : int
    divergence : {"itakura_saito", "euclidean"}
    iters : int
    seed : int
        Seeds the random non-negative initialization of every speaker.
    band : BandSelection, optional
        Learn on a subset of rows only.

    Returns
    -------
    Dictionary
        ``K_per_speaker`` unit-norm atoms per speaker, in first-seen speaker
        order.
    """
    _check_divergence(divergence)
    if len(training) == 0:
        raise ValueError("no training data")
    by_speaker: dict = {}
    freq_axis = None
    for label, spec in training:
        values = spec.values if isinstance(spec, MagSpectrogram) else np.asarray(spec, dtype=float)
        axis = spec.freq_axis if isinstance(spec, MagSpectrogram) else None
        if band is not None:
            values = band.apply(values)
            axis = None if axis is None else band.apply(axis)
        if values.size == 0:
            raise ValueError(f"empty spectrogram for speaker {label!r}")
        if freq_axis is None:
            freq_axis = axis
        by_speaker.setdefault(label, []).append(values)
    rng = np.random.default_rng(seed)
    atoms, meta = [], []
    for label, parts in by_speaker.items():
        V = np.concatenate(parts, axis=1)
        if not np.any(V > 0):
            raise ValueError(f"training data for speaker {label!r} is all zero")
        if divergence == "itakura_saito":
            V = np.maximum(V, V[V > 0].min())
        W, _ = _nmf(V, K_per_speaker, divergence, iters, rng)
        W /= np.linalg.norm(W, axis=0)
        atoms.append(W)
        meta.extend([str(label)] * K_per_speaker)
        log.debug("learned %d atoms for speaker %s", K_per_speaker, label)
    return Dictionary(np.concatenate(atoms, axis=1), tuple(meta), freq_axis)
