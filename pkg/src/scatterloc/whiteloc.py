"""Localization of white sources by exhaustive subspace projection.

The observed PSD of J white sources is a positive combination of the J
squared responses.  Every J-subset of directions spans a subspace; the
estimate is the subset whose subspace leaves the smallest Euclidean
residual.  Orthonormal bases of all subsets are precomputed once per
(device, J) and reused across observations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .scatter import DirectionalResponseSet

__all__ = [
    "CandidateBudgetError",
    "SubspaceCandidate",
    "WhiteLocalization",
    "WhiteLocalizer",
    "projection_residual",
    "localize_white",
]

DEFAULT_BUDGET = 10**6
TIE_RTOL = 1e-9


class CandidateBudgetError(ValueError):
    """Too many direction subsets to enumerate."""


@dataclass(frozen=True)
class SubspaceCandidate:
    subset: tuple
    basis: np.ndarray
    residual: float

    def __post_init__(self):
        if self.residual < 0:
            raise ValueError("residual must be non-negative")
        if any(b <= a for a, b in zip(self.subset, self.subset[1:])):
            raise ValueError("subset must be strictly increasing")


@dataclass(frozen=True)
class WhiteLocalization:
    """Result of :func:`localize_white`.

    ``residuals[i]`` belongs to ``subsets[i]`` (lexicographic order).
    ``tie`` is set when another subset reaches the minimum residual within
    a relative tolerance; the lexicographically smallest one is returned.
    """

    indices: tuple
    azimuths_deg: tuple
    subsets: np.ndarray
    residuals: np.ndarray
    tie: bool


def _orthonormal_basis(B: np.ndarray) -> np.ndarray:
    """Column basis of ``B`` (F, J) via thin SVD, rank-revealing."""
    u, s, _ = np.linalg.svd(B, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((B.shape[0], 0))
    rank = int(np.sum(s > s[0] * max(B.shape) * np.finfo(float).eps))
    return u[:, :rank]


def projection_residual(psd, basis) -> float:
    """Norm of the least-squares residual of ``psd`` against the columns of ``basis``."""
    psd = np.asarray(psd, dtype=float)
    basis = np.asarray(basis, dtype=float)
    if basis.ndim == 1:
        basis = basis[:, None]
    if basis.shape[0] != psd.shape[0]:
        raise ValueError("basis must have one row per frequency bin")
    q = _orthonormal_basis(basis)
    return float(np.linalg.norm(psd - q @ (q.T @ psd)))


class WhiteLocalizer:
    """Precomputed subset bases for one device and source count.

    Parameters
    ----------
    responses : DirectionalResponseSet
    J : int
        Number of sources.
    budget : int
        Maximum number of subsets to enumerate.
    """

    def __init__(self, responses: DirectionalResponseSet, J: int, budget: int = DEFAULT_BUDGET):
        D, F = responses.n_directions, responses.n_bins
        if J < 1:
            raise ValueError("J must be at least 1")
        if J >= F:
            raise ValueError("J must be smaller than the number of frequency bins")
        if J > D:
            raise ValueError("J exceeds the number of directions")
        n_sub = comb(D, J)
        if n_sub > budget:
            raise CandidateBudgetError(
                f"C({D}, {J}) = {n_sub} candidate subsets exceed the budget of {budget}; "
                "reduce the number of directions or sources"
            )
        self.responses = responses
        self.J = J
        self.subsets = np.array(list(itertools.combinations(range(D), J)), dtype=int)
        power = responses.power
        # stacked orthonormal bases, zero-padded where a subset is rank deficient
        self._bases = np.zeros((n_sub, F, J))
        for i, sub in enumerate(self.subsets):
            q = _orthonormal_basis(power[sub].T)
            self._bases[i, :, : q.shape[1]] = q

    def residuals(self, psd) -> np.ndarray:
        psd = np.asarray(psd, dtype=float)
        if psd.shape != (self.responses.n_bins,):
            raise ValueError("psd length must match the response set")
        out = np.empty(len(self.subsets))
        step = max(1, 2**22 // (psd.size * self.J))
        for a in range(0, len(self.subsets), step):
            q = self._bases[a : a + step]
            coef = np.einsum("sfj,f->sj", q, psd)
            resid = psd[None, :] - np.einsum("sfj,sj->sf", q, coef)
            out[a : a + step] = np.linalg.norm(resid, axis=1)
        return out

    def localize(self, psd) -> WhiteLocalization:
        res = self.residuals(psd)
        best = res.min()
        tol = TIE_RTOL * max(np.linalg.norm(psd), np.finfo(float).tiny)
        near = np.flatnonzero(res <= best + tol)
        # subsets are enumerated lexicographically, so the first is the smallest
        pick = int(near[0])
        idx = tuple(int(i) for i in self.subsets[pick])
        az = tuple(float(self.responses.azimuths_deg[i]) for i in idx)
        return WhiteLocalization(idx, az, self.subsets, res, tie=near.size > 1)

    def candidate(self, i: int, psd) -> SubspaceCandidate:
        sub = tuple(int(k) for k in self.subsets[i])
        basis = self.responses.power[list(sub)].T
        return SubspaceCandidate(sub, basis, projection_residual(psd, basis))


def localize_white(psd, responses: DirectionalResponseSet, J: int, budget: int = DEFAULT_BUDGET) -> WhiteLocalization:
    """Pick the J directions whose squared responses best span ``psd``."""
    return WhiteLocalizer(responses, J, budget).localize(psd)
