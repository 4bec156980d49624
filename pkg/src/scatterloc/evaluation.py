"""Localization metrics: permutation-matched circular error, bin accuracy,
per-source accuracy and confusion matrices."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "MAX_SOURCES",
    "TrialOutcome",
    "ConfusionMatrix",
    "circular_diff",
    "match_sources",
    "matched_circular_error",
    "make_outcome",
    "bin_accuracy",
    "accumulate_confusion",
    "confusion_svg",
]

MAX_SOURCES = 8
_HIT_ATOL = 1e-9


def circular_diff(a, b):
    """Absolute angular distance in degrees, in [0, 180]."""
    return np.abs(np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + 180.0, 360.0) - 180.0)


def match_sources(truth, estimates):
    """Best permutation of ``estimates`` against ``truth``.

    Returns ``(perm, errors)`` where ``estimates[perm[j]]`` is matched to
    ``truth[j]`` and ``errors[j]`` is their circular distance.
    """
    truth = np.asarray(truth, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truth.shape != estimates.shape or truth.ndim != 1:
        raise ValueError("truth and estimates must have the same number of sources")
    J = truth.size
    if J > MAX_SOURCES:
        raise ValueError(f"exhaustive matching supports at most {MAX_SOURCES} sources")
    cost = circular_diff(truth[:, None], estimates[None, :])
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(J)):
        total = cost[np.arange(J), perm].sum()
        if total < best - 1e-12:
            best, best_perm = total, perm
    perm = np.array(best_perm, dtype=int)
    return perm, cost[np.arange(J), perm]


def matched_circular_error(truth, estimates) -> float:
    """Mean circular error (degrees) under the best source permutation."""
    return float(np.mean(match_sources(truth, estimates)[1]))


@dataclass(frozen=True)
class TrialOutcome:
    truth_deg: tuple
    estimates_deg: tuple
    matched_error_deg: float
    hit: bool
    per_source_hits: tuple
    per_source_errors: tuple

    def __post_init__(self):
        if not 0 <= self.matched_error_deg <= 180:
            raise ValueError("matched error must lie in [0, 180]")

    @property
    def matched_estimates(self) -> tuple:
        perm, _ = match_sources(self.truth_deg, self.estimates_deg)
        return tuple(self.estimates_deg[i] for i in perm)


def make_outcome(truth, estimates, bin_width_deg: float = 10.0) -> TrialOutcome:
    _, errors = match_sources(truth, estimates)
    per = tuple(bool(e <= bin_width_deg / 2 + _HIT_ATOL) for e in errors)
    return TrialOutcome(
        tuple(float(t) for t in truth),
        tuple(float(e) for e in estimates),
        float(np.mean(errors)),
        all(per),
        per,
        tuple(float(e) for e in errors),
    )


def bin_accuracy(outcomes: Sequence[TrialOutcome], bin_width_deg: float = 10.0):
    """Accuracy, mean error over hit trials, and per-source accuracy.

    A source is a hit when its matched error is at most half the bin width;
    a trial is a hit when all its sources are.  The mean error is ``nan``
    when no trial hits.
    """
    if len(outcomes) == 0:
        raise ValueError("no outcomes")
    half = bin_width_deg / 2 + _HIT_ATOL
    src_hits = [np.asarray(o.per_source_errors) <= half for o in outcomes]
    trial_hits = np.array([h.all() for h in src_hits])
    errors = np.array([o.matched_error_deg for o in outcomes])
    accuracy = float(trial_hits.mean())
    mean_err = float(errors[trial_hits].mean()) if trial_hits.any() else float("nan")
    per_source = float(np.concatenate(src_hits).mean())
    return accuracy, mean_err, per_source


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    labels_deg: np.ndarray

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if not np.array_equal(self.labels_deg, other.labels_deg):
            raise ValueError("cannot merge confusion matrices over different grids")
        return ConfusionMatrix(self.counts + other.counts, self.labels_deg)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["truth\\estimate"] + [f"{a:g}" for a in self.labels_deg])
            for a, row in zip(self.labels_deg, self.counts):
                w.writerow([f"{a:g}"] + [int(c) for c in row])


def _nearest_bin(angles, n_bins: int) -> np.ndarray:
    step = 360.0 / n_bins
    return np.rint(np.mod(np.asarray(angles, dtype=float), 360.0) / step).astype(int) % n_bins


def accumulate_confusion(outcomes: Sequence[TrialOutcome], D: int) -> ConfusionMatrix:
    """Count (true bin, estimated bin) over permutation-matched source pairs.

    Both axes use the D evenly spaced model directions; angles are assigned
    to their nearest bin.
    """
    counts = np.zeros((D, D), dtype=int)
    for o in outcomes:
        t = _nearest_bin(o.truth_deg, D)
        e = _nearest_bin(o.matched_estimates, D)
        np.add.at(counts, (t, e), 1)
    return ConfusionMatrix(counts, np.arange(D) * 360.0 / D)


def confusion_svg(cm: ConfusionMatrix, path=None, cell: int = 12, title: str = "") -> str:
    """Render a confusion matrix as a standalone SVG heatmap (D x D cells)."""
    D = cm.counts.shape[0]
    margin = 40
    size = D * cell
    peak = max(int(cm.counts.max()), 1)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 2 * margin}" height="{size + 2 * margin}" '
        f'data-rows="{D}" data-cols="{cm.counts.shape[1]}">',
        f'<text x="{margin}" y="{margin // 2}" font-size="12">{title}</text>',
    ]
    for i in range(D):
        for j in range(cm.counts.shape[1]):
            v = cm.counts[i, j] / peak
            shade = int(round(255 * (1 - v)))
            parts.append(
                f'<rect class="cell" x="{margin + j * cell}" y="{margin + i * cell}" width="{cell}" '
                f'height="{cell}" fill="rgb({shade},{shade},255)"><title>{int(cm.counts[i, j])}</title></rect>'
            )
    parts.append(
        f'<text x="{margin + size // 2}" y="{size + margin + 25}" font-size="11" text-anchor="middle">'
        "estimated direction</text>"
    )
    parts.append(
        f'<text x="12" y="{margin + size // 2}" font-size="11" transform="rotate(-90 12 {margin + size // 2})" '
        'text-anchor="middle">true direction</text>'
    )
    parts.append("</svg>")
    svg = "\n".join(parts)
    if path is not None:
        Path(path).write_text(svg)
    return svg
