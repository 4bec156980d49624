"""Config-driven experiment harness.

An experiment is one JSON file validated against :data:`CONFIG_SCHEMA`.  It
names a device, a source pool, a localization method and a grid of
(J, SNR) conditions; :func:`run_experiment` draws ``trials`` random scenes
per condition and writes one JSON line per trial.  Scene seeds depend only
on the master seed, J, the SNR and the trial index, so two configs that
differ only in the method see exactly the same mixtures.

Everything in the summary is recomputed from the JSONL records
(:func:`summarize_records`), never from in-memory state.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .doa import MultiresConfig, localize
from .evaluation import accumulate_confusion, bin_accuracy, confusion_svg, make_outcome
from .io import load_device, load_dictionary
from .nmf import Dictionary, SolverConfig, learn_dictionary
from .scatter import (
    BandSelection,
    band_select,
    interpolate_to_grid,
    stft_freq_axis,
    synth_rough_scatterer,
    synth_smooth_scatterer,
    uniform_azimuths,
)
from .signal import TimeSignal, empirical_psd, magnitude, stft
from .simulate import SourceSpec, make_source, make_speaker_spec, random_scene, render_mixture
from .whiteloc import WhiteLocalizer

__all__ = [
    "CONFIG_SCHEMA",
    "CORPUS_SCHEMA",
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "config_hash",
    "corpus_specs",
    "prototype_dictionary",
    "train_dictionary",
    "trial_seed",
    "run_trials",
    "run_experiment",
    "read_records",
    "summarize_records",
    "write_summary",
    "write_report",
]

log = logging.getLogger(__name__)

METHODS = ("white", "nmf-prototype", "nmf-usm")

CORPUS_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["white", "prototype-colored", "harmonic-speaker"]},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "count": {"type": "integer", "minimum": 1},
        "n_female": {"type": "integer", "minimum": 0},
        "n_male": {"type": "integer", "minimum": 0},
        "speaker_seed": {"type": "integer", "minimum": 0},
        "utterance_seed": {"type": "integer", "minimum": 0},
        "utterances_per_speaker": {"type": "integer", "minimum": 1},
    },
    "required": ["kind", "duration_s"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "name": {"type": "string"},
        "device": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["rough", "smooth", "file"]},
                "seed": {"type": "integer", "minimum": 0},
                "path": {"type": "string"},
                "params": {"type": "object"},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "sample_rate": {"type": "integer", "minimum": 1},
        "window_len": {"type": "integer", "minimum": 2},
        "model_directions": {"type": "integer", "minimum": 1},
        "fine_directions": {"type": "integer", "minimum": 1},
        "band": {
            "type": ["object", "null"],
            "properties": {"fmin": {"type": "number"}, "fmax": {"type": "number"}},
            "required": ["fmin", "fmax"],
            "additionalProperties": False,
        },
        "method": {"enum": list(METHODS)},
        "solver": {
            "type": "object",
            "properties": {
                "divergence": {"enum": ["itakura_saito", "euclidean"]},
                "lam": {"type": "number", "minimum": 0},
                "gamma": {"type": "number", "minimum": 0},
                "iters": {"type": "integer", "minimum": 1},
                "init": {"enum": ["ATY", "random"]},
            },
            "additionalProperties": False,
        },
        "sources": CORPUS_SCHEMA,
        "dictionary": {
            "type": "object",
            "properties": {
                "path": {"type": "string"},
                "train": {
                    "type": "object",
                    "properties": {
                        "corpus": CORPUS_SCHEMA,
                        "K": {"type": "integer", "minimum": 1},
                        "iters": {"type": "integer", "minimum": 1},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                    "required": ["corpus"],
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "J": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "snr_db": {"type": "array", "items": {"type": ["number", "string"]}, "minItems": 1},
        "trials": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "multires": {
            "type": ["object", "null"],
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "fine_step_deg": {"type": "number", "exclusiveMinimum": 0},
                "R": {"type": "integer", "minimum": 0},
                "lam": {"type": ["number", "null"], "minimum": 0},
                "gamma": {"type": ["number", "null"], "minimum": 0},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "n_jobs": {"type": "integer", "minimum": 1},
    },
    "required": ["device", "method", "sources", "J", "snr_db", "trials"],
    "additionalProperties": False,
}

DEFAULTS = {
    "name": "experiment",
    "sample_rate": 16000,
    "window_len": 1024,
    "model_directions": 36,
    "fine_directions": 360,
    "band": None,
    "solver": {"divergence": "itakura_saito", "lam": 0.0, "gamma": 0.0, "iters": 100, "init": "ATY"},
    "seed": 0,
    "multires": None,
    "n_jobs": 1,
}

# fields that cannot change results and are left out of the config hash
_UNHASHED = ("output_dir", "n_jobs", "name")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


def _parse_snr(v) -> float:
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "+inf"):
            return float("inf")
        raise ConfigError(f"SNR {v!r}: only numbers or 'inf' are accepted")
    return float(v)


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description (see :data:`CONFIG_SCHEMA`)."""

    raw: dict

    def __post_init__(self):
        try:
            jsonschema.validate(self.raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message} at {list(exc.absolute_path)}") from exc
        merged = copy.deepcopy(DEFAULTS)
        for key, value in self.raw.items():
            if key == "solver":
                merged["solver"].update(value)
            else:
                merged[key] = value
        object.__setattr__(self, "raw", merged)
        self._check()

    def _check(self):
        r = self.raw
        if r["model_directions"] > r["fine_directions"]:
            raise ConfigError("model grid cannot be finer than the fine grid")
        if r["device"]["kind"] == "file":
            path = r["device"].get("path")
            if not path or not Path(path).is_file():
                raise ConfigError(f"device file {path!r} does not exist")
        if r["method"] == "nmf-usm":
            d = r.get("dictionary") or {}
            if ("path" in d) == ("train" in d):
                raise ConfigError("nmf-usm needs exactly one of dictionary.path or dictionary.train")
            if "path" in d and not Path(d["path"]).is_file():
                raise ConfigError(f"dictionary file {d['path']!r} does not exist")
        if r["method"] == "white" and r["multires"] is not None:
            raise ConfigError("multiresolution applies to the NMF methods only")
        if r["multires"] is not None:
            m = self.multires
            if max(r["J"]) > m.T:
                raise ConfigError("multires T must be at least the largest J")
            fine_step = 360.0 / r["fine_directions"]
            if abs(m.fine_step_deg / fine_step - round(m.fine_step_deg / fine_step)) > 1e-9:
                raise ConfigError("multires fine_step_deg must be a multiple of the fine grid step")
        for J in r["J"]:
            if J > r["model_directions"]:
                raise ConfigError(f"J = {J} exceeds the model grid")
        for v in r["snr_db"]:
            _parse_snr(v)
        if r["band"] is not None and r["band"]["fmin"] > r["band"]["fmax"]:
            raise ConfigError("band fmin exceeds fmax")
        corpus_specs(r["sources"])

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def solver(self) -> SolverConfig:
        s = self.raw["solver"]
        return SolverConfig(s["divergence"], s["lam"], s["gamma"], s["iters"])

    @property
    def multires(self) -> MultiresConfig | None:
        m = self.raw["multires"]
        return None if m is None else MultiresConfig(**m)

    @property
    def snrs(self) -> list:
        return [_parse_snr(v) for v in self.raw["snr_db"]]

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def replace(self, **changes) -> "ExperimentConfig":
        """New config with top-level keys replaced (``solver`` is merged)."""
        raw = copy.deepcopy(self.raw)
        for k, v in changes.items():
            if k == "solver":
                raw["solver"].update(v)
            else:
                raw[k] = v
        return ExperimentConfig(raw)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig(raw)


def config_hash(raw: dict) -> str:
    """Short SHA-256 of the canonical JSON of the result-relevant fields."""
    body = {k: v for k, v in raw.items() if k not in _UNHASHED}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def corpus_specs(spec: dict) -> list:
    """Expand a corpus description into SourceSpecs.

    Harmonic speakers take ``n_female`` / ``n_male`` voices seeded from
    ``speaker_seed`` upward (female first), each with
    ``utterances_per_speaker`` utterances; other kinds take ``count``
    sources seeded from ``utterance_seed``.
    """
    try:
        jsonschema.validate(spec, CORPUS_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"invalid corpus: {exc.message}") from exc
    dur = spec["duration_s"]
    useed = spec.get("utterance_seed", 0)
    if spec["kind"] != "harmonic-speaker":
        return [SourceSpec(spec["kind"], dur, useed + i, label=f"{spec['kind']}-{useed + i}") for i in range(spec.get("count", 1))]
    n_f, n_m = spec.get("n_female", 1), spec.get("n_male", 1)
    if n_f + n_m == 0:
        raise ConfigError("corpus has no speakers")
    sseed = spec.get("speaker_seed", 0)
    per = spec.get("utterances_per_speaker", 1)
    out = []
    for i, gender in enumerate(["female"] * n_f + ["male"] * n_m):
        for u in range(per):
            out.append(make_speaker_spec(gender, sseed + i, useed + i * per + u, dur))
    return out


def _normalized(x: TimeSignal) -> TimeSignal:
    return TimeSignal(x.samples / np.max(np.abs(x.samples)), x.sample_rate)


def prototype_dictionary(sources, window_len: int = 1024) -> Dictionary:
    """One atom per source: its time-averaged magnitude spectrum.

    Sources are peak-normalized first, as they are in rendered mixtures.
    """
    atoms, meta, axis = [], [], None
    for label, x in sources:
        spec = magnitude(stft(_normalized(x), window_len))
        atoms.append(spec.values.mean(axis=1))
        meta.append(str(label))
        axis = spec.freq_axis
    return Dictionary(np.stack(atoms, axis=1), tuple(meta), axis)


def train_dictionary(
    specs, K: int, divergence: str, band: BandSelection | None = None, iters: int = 200, seed: int = 0,
    sample_rate: int = 16000, window_len: int = 1024,
) -> Dictionary:
    """Universal speech model from a list of SourceSpecs (speaker = label)."""
    data = []
    for s in specs:
        x = _normalized(make_source(s, sample_rate))
        data.append((s.label, magnitude(stft(x, window_len))))
    return learn_dictionary(data, K, divergence, iters, seed, band)


def trial_seed(master: int, J: int, snr_index: int, trial: int) -> int:
    """Scene seed of one trial, independent of method and worker layout."""
    return int(np.random.SeedSequence([master, J, snr_index, trial]).generate_state(1)[0])


class _Context:
    """Everything a worker needs, rebuilt deterministically from the config."""

    def __init__(self, cfg: ExperimentConfig):
        r = cfg.raw
        self.cfg = cfg
        fa = stft_freq_axis(r["sample_rate"], r["window_len"])
        dev = r["device"]
        params = dev.get("params", {})
        if dev["kind"] == "file":
            fine = load_device(dev["path"])
            if fine.n_directions != r["fine_directions"]:
                fine = interpolate_to_grid(fine, uniform_azimuths(r["fine_directions"]))
        elif dev["kind"] == "rough":
            fine = synth_rough_scatterer(r["fine_directions"], fa, seed=dev.get("seed", 0), **params)
        else:
            fine = synth_smooth_scatterer(r["fine_directions"], fa, seed=dev.get("seed", 0), **params)
        self.fine = fine
        self.model = interpolate_to_grid(fine, uniform_azimuths(r["model_directions"]))
        self.band = None if r["band"] is None else BandSelection.from_axis(fine.freq_axis, r["band"]["fmin"], r["band"]["fmax"])
        specs = corpus_specs(r["sources"])
        self.pool = [make_source(s, r["sample_rate"]) for s in specs]
        self.W = None
        if r["method"] == "nmf-prototype":
            self.W = prototype_dictionary(zip([s.label for s in specs], self.pool), r["window_len"])
        elif r["method"] == "nmf-usm":
            d = r["dictionary"]
            if "path" in d:
                self.W = load_dictionary(d["path"])
            else:
                t = d["train"]
                self.W = train_dictionary(
                    corpus_specs(t["corpus"]), t.get("K", 10), r["solver"]["divergence"], self.band,
                    t.get("iters", 200), t.get("seed", 0), r["sample_rate"], r["window_len"],
                )
        self._white = {}

    def white_localizer(self, J: int) -> WhiteLocalizer:
        if J not in self._white:
            model = self.model
            if self.band is not None:
                model, _ = band_select(model, self.band.fmin, self.band.fmax)
            self._white[J] = WhiteLocalizer(model, J)
        return self._white[J]

    def run_trial(self, task) -> dict:
        J, snr_index, trial = task
        r = self.cfg.raw
        snr = self.cfg.snrs[snr_index]
        seed = trial_seed(r["seed"], J, snr_index, trial)
        scene = random_scene(J, r["fine_directions"], self.pool, snr, seed, r["sample_rate"])
        y = render_mixture(scene, self.fine)
        t0 = time.perf_counter()
        record = {
            "trial": trial,
            "J": J,
            "snr_db": snr if np.isfinite(snr) else "inf",
            "scene_seed": seed,
            "truth_deg": [float(a) for a in scene.azimuths_deg],
        }
        if r["method"] == "white":
            spec = stft(y, r["window_len"])
            psd = empirical_psd(spec)
            if self.band is not None:
                psd = self.band.apply(psd)
            res = self.white_localizer(J).localize(psd)
            record.update(estimates_deg=list(res.azimuths_deg), group_energies=None, stage="subspace",
                          residual=float(res.residuals.min()), tie=bool(res.tie))
        else:
            init = r["solver"]["init"]
            res = localize(
                y, self.model, self.W, J, self.cfg.solver, self.band, self.cfg.multires, self.fine, init, seed
            )
            if res.coarse is not None:
                record["coarse_estimates_deg"] = [float(a) for a in res.coarse.estimates_deg]
            record.update(
                estimates_deg=[float(a) for a in res.estimates_deg],
                group_energies=[float(e) for e in res.group_energies],
                stage=res.stage,
            )
        record["timing_ms"] = round(1000 * (time.perf_counter() - t0), 3)
        record["config_hash"] = self.cfg.hash
        return record


_WORKER: _Context | None = None


def _init_worker(raw: dict) -> None:
    global _WORKER
    _WORKER = _Context(ExperimentConfig(raw))


def _worker_trial(task) -> dict:
    return _WORKER.run_trial(task)


def _tasks(cfg: ExperimentConfig) -> list:
    return [(J, s, t) for J in cfg["J"] for s in range(len(cfg["snr_db"])) for t in range(cfg["trials"])]


def run_trials(cfg: ExperimentConfig, n_jobs: int | None = None, context: _Context | None = None) -> list:
    """Run every trial of ``cfg`` and return the records in canonical order.

    ``n_jobs > 1`` spreads trials over worker processes; each worker
    rebuilds the context from the config, so results do not depend on the
    worker count.
    """
    n_jobs = cfg["n_jobs"] if n_jobs is None else n_jobs
    tasks = _tasks(cfg)
    if n_jobs <= 1:
        ctx = context if context is not None else _Context(cfg)
        return [ctx.run_trial(t) for t in tasks]
    with ProcessPoolExecutor(n_jobs, initializer=_init_worker, initargs=(cfg.raw,)) as ex:
        # map preserves task order, which is the canonical order
        return list(ex.map(_worker_trial, tasks, chunksize=max(1, len(tasks) // (4 * n_jobs))))


def _jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _snr_tag(v) -> str:
    v = float(v)
    return "inf" if np.isinf(v) else f"{v:g}"


def read_records(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize_records(records, bin_width_deg: float = 10.0, stage_key: str = "estimates_deg") -> list:
    """One row per (J, SNR) in first-seen order, computed from records only."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r["J"], _snr_tag(r["snr_db"])), []).append(r)
    rows = []
    for (J, snr), recs in groups.items():
        outs = [make_outcome(r["truth_deg"], r[stage_key], bin_width_deg) for r in recs]
        acc, err, per = bin_accuracy(outs, bin_width_deg)
        rows.append({"J": J, "snr_db": snr, "trials": len(recs), "accuracy": acc, "mean_error": err, "per_source": per})
    return rows


SUMMARY_FIELDS = ["device", "method", "divergence", "stage", "J", "snr_db", "trials", "accuracy", "mean_error", "per_source", "config_hash"]


def write_summary(path, cfg: ExperimentConfig, records) -> list:
    bin_width = 360.0 / cfg["model_directions"]
    rows = []
    stages = [("estimates_deg", records[0]["stage"] if records else "coarse")]
    if records and "coarse_estimates_deg" in records[0]:
        stages.insert(0, ("coarse_estimates_deg", "coarse"))
    for key, stage in stages:
        for row in summarize_records(records, bin_width, key):
            row.update(
                device=cfg["device"]["kind"], method=cfg["method"],
                divergence=cfg["solver"]["divergence"] if cfg["method"] != "white" else "",
                stage=stage, config_hash=cfg.hash,
            )
            rows.append(row)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_FIELDS)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return rows


def run_experiment(cfg: ExperimentConfig, out_dir=None, n_jobs: int | None = None) -> Path:
    """Run ``cfg`` and write ``config.json``, ``results.jsonl`` and ``summary.csv``."""
    out = Path(out_dir if out_dir is not None else cfg.raw.get("output_dir", cfg["name"]))
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({**cfg.raw, "config_hash": cfg.hash}, indent=1, sort_keys=True))
    log.info("running %s (%s), %d trials", cfg["name"], cfg.hash, len(_tasks(cfg)))
    records = run_trials(cfg, n_jobs)
    (out / "results.jsonl").write_text(_jsonl(records))
    write_summary(out / "summary.csv", cfg, records)
    return out


def write_report(results_dir) -> list:
    """Recompute tables and confusion heatmaps from a results directory.

    Writes ``report.csv`` plus ``confusion_J{J}_snr{snr}.csv/.svg`` for each
    condition and returns the report rows.
    """
    results_dir = Path(results_dir)
    raw = json.loads((results_dir / "config.json").read_text())
    raw.pop("config_hash", None)
    cfg = ExperimentConfig(raw)
    records = read_records(results_dir / "results.jsonl")
    if not records:
        raise ValueError(f"{results_dir} has no result records")
    rows = write_summary(results_dir / "report.csv", cfg, records)
    D = cfg["model_directions"]
    groups: dict = {}
    for r in records:
        groups.setdefault((r["J"], _snr_tag(r["snr_db"])), []).append(r)
    for (J, snr), recs in groups.items():
        outs = [make_outcome(r["truth_deg"], r["estimates_deg"], 360.0 / D) for r in recs]
        cm = accumulate_confusion(outs, D)
        stem = f"confusion_J{J}_snr{snr}"
        cm.to_csv(results_dir / f"{stem}.csv")
        confusion_svg(cm, results_dir / f"{stem}.svg", title=f"{cfg['name']}: J={J}, SNR={snr} dB")
    return rows
