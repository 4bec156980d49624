"""Monaural direction-of-arrival estimation with a scattering device.

A single microphone behind an irregular scatterer hears every direction
through a different spectral filter.  This package localizes sources from
those imprints:

* :mod:`scatterloc.whiteloc` localizes white sources by subspace fitting of
  the observed power spectrum;
* :mod:`scatterloc.nmf` and :mod:`scatterloc.doa` localize speech by
  non-negative factorization against a source dictionary, with sparse-group
  penalties and optional multiresolution refinement.

Supporting modules synthesize devices (:mod:`~scatterloc.scatter`), sources
and mixtures (:mod:`~scatterloc.simulate`), score results
(:mod:`~scatterloc.evaluation`) and run config-driven experiments
(:mod:`~scatterloc.experiment`, :mod:`~scatterloc.cli`).
"""

__version__ = "0.1.0"

from .doa import DoAResult, MultiresConfig, localize, refine
from .evaluation import bin_accuracy, make_outcome, matched_circular_error
from .nmf import Dictionary, MixingMatrix, SolverConfig, SolverError, factorize, learn_dictionary
from .scatter import (
    BandSelection,
    DirectionalResponseSet,
    band_select,
    from_impulse_responses,
    interpolate_to_grid,
    stft_freq_axis,
    synth_rough_scatterer,
    synth_smooth_scatterer,
)
from .signal import TimeSignal, empirical_psd, magnitude, stft
from .simulate import Scene, SourceSpec, make_source, make_speaker_spec, random_scene, render_mixture
from .whiteloc import WhiteLocalizer, localize_white

__all__ = [
    "BandSelection",
    "Dictionary",
    "DirectionalResponseSet",
    "DoAResult",
    "MixingMatrix",
    "MultiresConfig",
    "Scene",
    "SolverConfig",
    "SolverError",
    "SourceSpec",
    "TimeSignal",
    "WhiteLocalizer",
    "band_select",
    "bin_accuracy",
    "empirical_psd",
    "factorize",
    "from_impulse_responses",
    "interpolate_to_grid",
    "learn_dictionary",
    "localize",
    "localize_white",
    "magnitude",
    "make_outcome",
    "make_source",
    "make_speaker_spec",
    "matched_circular_error",
    "random_scene",
    "refine",
    "render_mixture",
    "stft",
    "stft_freq_axis",
    "synth_rough_scatterer",
    "synth_smooth_scatterer",
]
