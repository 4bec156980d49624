import csv
import json

import numpy as np
import pytest

from scatterloc.experiment import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    corpus_specs,
    prototype_dictionary,
    read_records,
    run_experiment,
    run_trials,
    summarize_records,
    trial_seed,
    write_report,
)
from scatterloc.evaluation import make_outcome

WHITE = {
    "name": "white-smoke",
    "device": {"kind": "rough", "seed": 1},
    "method": "white",
    "sources": {"kind": "white", "duration_s": 0.5, "count": 4},
    "J": [1, 2],
    "snr_db": [30, "inf"],
    "trials": 6,
}

USM = {
    "name": "usm-smoke",
    "device": {"kind": "rough", "seed": 1},
    "method": "nmf-usm",
    "band": {"fmin": 3000, "fmax": 8000},
    "dictionary": {
        "train": {
            "corpus": {"kind": "harmonic-speaker", "duration_s": 0.5, "n_female": 1, "n_male": 1, "speaker_seed": 1000},
            "K": 3,
            "iters": 20,
        }
    },
    "sources": {"kind": "harmonic-speaker", "duration_s": 0.3, "n_female": 1, "n_male": 1, "speaker_seed": 2000},
    "J": [1],
    "snr_db": [30],
    "trials": 3,
    "solver": {"iters": 10},
    "multires": {"T": 3},
}


def _tag(v):
    return "inf" if v == "inf" else f"{float(v):g}"


def strip_timing(records):
    return [{k: v for k, v in r.items() if k != "timing_ms"} for r in records]


class TestConfig:
    def test_defaults_filled(self):
        cfg = ExperimentConfig(WHITE)
        assert cfg["model_directions"] == 36 and cfg["solver"]["iters"] == 100
        assert cfg.snrs == [30.0, float("inf")]

    @pytest.mark.parametrize(
        "change",
        [
            {"method": "nmf-magic"},
            {"J": []},
            {"J": [40]},
            {"trials": 0},
            {"snr_db": ["loud"]},
            {"band": {"fmin": 5000, "fmax": 1000}},
            {"model_directions": 720},
            {"unknown": 1},
            {"device": {"kind": "file", "path": "/nonexistent.bin"}},
            {"method": "nmf-usm"},
            {"multires": {"T": 7}},
        ],
    )
    def test_invalid(self, change):
        with pytest.raises(ConfigError):
            ExperimentConfig({**WHITE, **change})

    def test_multires_T_below_J(self):
        with pytest.raises(ConfigError):
            ExperimentConfig({**USM, "J": [1, 4]})

    def test_hash_ignores_plumbing(self):
        a = ExperimentConfig(WHITE)
        b = ExperimentConfig({**WHITE, "n_jobs": 4, "output_dir": "/x", "name": "other"})
        assert a.hash == b.hash
        assert a.hash != ExperimentConfig({**WHITE, "seed": 1}).hash
        assert config_hash(a.raw) == a.hash

    def test_replace_merges_solver(self):
        cfg = ExperimentConfig(USM).replace(solver={"divergence": "euclidean"})
        assert cfg["solver"]["iters"] == 10 and cfg["solver"]["divergence"] == "euclidean"


class TestCorpus:
    def test_speakers(self):
        specs = corpus_specs({"kind": "harmonic-speaker", "duration_s": 1.0, "n_female": 2, "n_male": 3, "utterances_per_speaker": 2})
        assert len(specs) == 10
        assert len({s.label for s in specs}) == 5
        assert sum(s.label.startswith("female") for s in specs) == 4

    def test_fifty_speakers_give_500_atoms(self):
        specs = corpus_specs({"kind": "harmonic-speaker", "duration_s": 0.1, "n_female": 25, "n_male": 25})
        assert len({s.label for s in specs}) == 50

    def test_other_kinds(self):
        specs = corpus_specs({"kind": "white", "duration_s": 0.1, "count": 3, "utterance_seed": 7})
        assert [s.seed for s in specs] == [7, 8, 9]

    def test_prototype_dictionary_one_atom_per_source(self):
        from scatterloc.signal import TimeSignal

        x = TimeSignal(np.random.default_rng(0).standard_normal(4000), 16000)
        W = prototype_dictionary([("a", x), ("b", x)])
        assert W.atoms.shape == (513, 2) and W.atom_meta == ("a", "b")


class TestRunner:
    def test_seed_depends_on_condition_only(self):
        assert trial_seed(0, 1, 0, 5) == trial_seed(0, 1, 0, 5)
        assert len({trial_seed(0, J, s, t) for J in (1, 2) for s in range(3) for t in range(50)}) == 300

    def test_white_records(self):
        recs = run_trials(ExperimentConfig(WHITE))
        assert len(recs) == 2 * 2 * 6
        assert [(r["J"], r["snr_db"], r["trial"]) for r in recs][:3] == [(1, 30.0, 0), (1, 30.0, 1), (1, 30.0, 2)]
        for r in recs:
            assert len(r["estimates_deg"]) == r["J"] == len(r["truth_deg"])
            assert r["timing_ms"] >= 0 and r["stage"] == "subspace"
        assert summarize_records(recs)[0]["accuracy"] >= 0.9

    def test_methods_share_scenes(self):
        a = run_trials(ExperimentConfig(WHITE))
        b = run_trials(ExperimentConfig({**WHITE, "model_directions": 72}))
        assert [r["truth_deg"] for r in a] == [r["truth_deg"] for r in b]

    def test_parallel_matches_serial(self):
        cfg = ExperimentConfig(USM)
        assert strip_timing(run_trials(cfg, n_jobs=2)) == strip_timing(run_trials(cfg, n_jobs=1))

    def test_multires_records(self):
        recs = run_trials(ExperimentConfig(USM))
        assert all(r["stage"] == "refined" and len(r["coarse_estimates_deg"]) == 1 for r in recs)
        assert all(r["coarse_estimates_deg"][0] % 10 == 0 for r in recs)

    def test_deterministic_output_files(self, tmp_path):
        cfg = ExperimentConfig(WHITE)
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        ra, rb = read_records(tmp_path / "a/results.jsonl"), read_records(tmp_path / "b/results.jsonl")
        assert strip_timing(ra) == strip_timing(rb)
        assert all(r["config_hash"] == cfg.hash for r in ra)
        assert json.loads((tmp_path / "a/config.json").read_text())["config_hash"] == cfg.hash

    def test_report_recount(self, tmp_path):
        cfg = ExperimentConfig(WHITE)
        out = run_experiment(cfg, tmp_path / "r")
        rows = write_report(out)
        assert len(rows) == len(cfg["J"]) * len(cfg["snr_db"])
        recs = read_records(out / "results.jsonl")
        for row in rows:
            sel = [r for r in recs if r["J"] == row["J"] and _tag(r["snr_db"]) == row["snr_db"]]
            hits = [make_outcome(r["truth_deg"], r["estimates_deg"]).hit for r in sel]
            assert row["accuracy"] == pytest.approx(np.mean(hits))
            counts = np.loadtxt(out / f"confusion_J{row['J']}_snr{row['snr_db']}.csv", delimiter=",", skiprows=1)[:, 1:]
            assert counts.shape == (36, 36) and counts.sum() == row["J"] * len(sel)
        with open(out / "summary.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 4
        svg = (out / "confusion_J2_snrinf.svg").read_text()
        assert 'data-rows="36"' in svg
