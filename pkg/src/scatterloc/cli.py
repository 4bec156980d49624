"""Command line entry point: ``scatterloc {device,corpus,train,run,report}``.

Relative output paths are resolved under ``$SCATTERLOC_OUT`` when it is set.
Exit codes: 0 success, 2 configuration error, 3 solver abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema

from . import __version__
from .experiment import (
    ConfigError,
    ExperimentConfig,
    corpus_specs,
    load_config,
    run_experiment,
    train_dictionary,
    write_report,
)
from .io import export_mags_csv, save_device, save_dictionary
from .nmf import DIVERGENCES, SolverError, learn_dictionary
from .scatter import BandSelection, stft_freq_axis, synth_rough_scatterer, synth_smooth_scatterer
from .signal import magnitude, read_wav, stft, write_wav
from .simulate import SourceSpec, make_source

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
OUT_ENV = "SCATTERLOC_OUT"

log = logging.getLogger("scatterloc")


def _out_path(p) -> Path:
    p = Path(p)
    root = os.environ.get(OUT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _param(text: str):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, float(value)


def cmd_device(args) -> int:
    fa = stft_freq_axis(args.sample_rate, args.window_len)
    params = dict(args.param or [])
    gen = synth_smooth_scatterer if args.kind == "smooth" else synth_rough_scatterer
    try:
        rset = gen(args.directions, fa, seed=args.seed, **params)
    except TypeError as exc:
        raise ConfigError(f"unknown device parameter: {exc}") from exc
    out = _out_path(args.output)
    save_device(out, rset)
    if args.csv:
        export_mags_csv(_out_path(args.csv), rset)
    print(out)
    return EXIT_OK


CORPUS_FORMAT = "scatterloc-corpus"


def cmd_corpus(args) -> int:
    spec = {"kind": args.kind, "duration_s": args.duration, "speaker_seed": args.speaker_seed,
            "utterance_seed": args.utterance_seed}
    if args.kind == "harmonic-speaker":
        spec.update(n_female=args.n_female, n_male=args.n_male, utterances_per_speaker=args.utterances)
    else:
        spec["count"] = args.count
        del spec["speaker_seed"]
    entries = []
    wav_dir = _out_path(args.wav_dir) if args.wav_dir else None
    if wav_dir:
        wav_dir.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(corpus_specs(spec)):
        entry = {"spec": s.to_dict()}
        if wav_dir:
            path = wav_dir / f"{i:04d}_{s.label}.wav"
            write_wav(path, make_source(s, args.sample_rate))
            entry["wav"] = str(path)
        entries.append(entry)
    out = _out_path(args.output)
    out.write_text(json.dumps({"format": CORPUS_FORMAT, "corpus": spec, "sources": entries}, indent=1))
    print(out)
    return EXIT_OK


def _read_corpus(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read corpus {path}: {exc}") from exc
    if doc.get("format") != CORPUS_FORMAT:
        raise ConfigError(f"{path} is not a corpus file")
    return doc


def cmd_train(args) -> int:
    doc = _read_corpus(args.corpus)
    fa = stft_freq_axis(args.sample_rate, args.window_len)
    band = BandSelection.from_axis(fa, *args.band) if args.band else None
    if all("wav" not in e for e in doc["sources"]):
        specs = [SourceSpec(**e["spec"]) for e in doc["sources"]]
        W = train_dictionary(specs, args.K, args.divergence, band, args.iters, args.seed, args.sample_rate, args.window_len)
    else:
        data = []
        for e in doc["sources"]:
            x = read_wav(e["wav"]) if "wav" in e else make_source(SourceSpec(**e["spec"]), args.sample_rate)
            if x.sample_rate != args.sample_rate:
                raise ConfigError(f"{e.get('wav')}: sample rate {x.sample_rate} != {args.sample_rate}")
            label = e.get("label") or e.get("spec", {}).get("label", "")
            data.append((label, magnitude(stft(x, args.window_len))))
        W = learn_dictionary(data, args.K, args.divergence, args.iters, args.seed, band)
    out = _out_path(args.output)
    save_dictionary(out, W, divergence=args.divergence, K_per_speaker=args.K, seed=args.seed)
    print(f"{out}: {W.atoms.shape[0]} bins x {W.n_atoms} atoms")
    return EXIT_OK


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes, solver = {}, {}
    for name in ("method", "trials", "seed"):
        v = getattr(args, name)
        if v is not None:
            changes[name] = v
    if args.J:
        changes["J"] = args.J
    if args.snr:
        changes["snr_db"] = args.snr
    for name in ("divergence", "lam", "gamma", "iters", "init"):
        v = getattr(args, name)
        if v is not None:
            solver[name] = v
    if solver:
        changes["solver"] = solver
    if args.no_multires:
        changes["multires"] = None
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = args.out or cfg.raw.get("output_dir") or f"{cfg['name']}-{cfg.hash}"
    out = _out_path(Path(out) / "x").parent
    run_experiment(cfg, out, args.jobs)
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    rows = write_report(args.results)
    for r in rows:
        print(
            f"{r['method']:>13} {r['stage']:>8} J={r['J']} SNR={r['snr_db']:>5}: "
            f"accuracy {r['accuracy']:.4f}, mean error {r['mean_error']:.2f} deg, per-source {r['per_source']:.4f}"
        )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scatterloc", description="Monaural localization with a scattering device.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("device", help="synthesize a device response file")
    d.add_argument("--kind", choices=["rough", "smooth"], default="rough")
    d.add_argument("--directions", type=int, default=360)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--sample-rate", type=int, default=16000)
    d.add_argument("--window-len", type=int, default=1024)
    d.add_argument("--param", type=_param, action="append", help="generator parameter, e.g. depth_db=6")
    d.add_argument("--csv", help="also write per-direction magnitudes as CSV")
    d.add_argument("-o", "--output", default="device.bin")
    d.set_defaults(func=cmd_device)

    c = sub.add_parser("corpus", help="write a synthetic source corpus manifest")
    c.add_argument("--kind", choices=["harmonic-speaker", "white", "prototype-colored"], default="harmonic-speaker")
    c.add_argument("--n-female", type=int, default=10)
    c.add_argument("--n-male", type=int, default=10)
    c.add_argument("--count", type=int, default=10, help="number of non-speech sources")
    c.add_argument("--utterances", type=int, default=1, help="utterances per speaker")
    c.add_argument("--duration", type=float, default=2.0)
    c.add_argument("--speaker-seed", type=int, default=1000)
    c.add_argument("--utterance-seed", type=int, default=5000)
    c.add_argument("--sample-rate", type=int, default=16000)
    c.add_argument("--wav-dir", help="also render every source to WAV here")
    c.add_argument("-o", "--output", default="corpus.json")
    c.set_defaults(func=cmd_corpus)

    t = sub.add_parser("train", help="learn a universal speech dictionary")
    t.add_argument("--corpus", required=True)
    t.add_argument("--K", type=int, default=10, help="atoms per speaker")
    t.add_argument("--divergence", choices=DIVERGENCES, default="itakura_saito")
    t.add_argument("--band", type=float, nargs=2, metavar=("FMIN", "FMAX"))
    t.add_argument("--iters", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--sample-rate", type=int, default=16000)
    t.add_argument("--window-len", type=int, default=1024)
    t.add_argument("-o", "--output", default="dictionary.bin")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="results directory (default: config output_dir or <name>-<hash>)")
    r.add_argument("--jobs", type=int, help="worker processes")
    r.add_argument("--method", choices=["white", "nmf-prototype", "nmf-usm"])
    r.add_argument("--divergence", choices=DIVERGENCES)
    r.add_argument("--lam", type=float)
    r.add_argument("--gamma", type=float)
    r.add_argument("--iters", type=int)
    r.add_argument("--init", choices=["ATY", "random"])
    r.add_argument("--J", type=int, nargs="+")
    r.add_argument("--snr", type=float, nargs="+")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--no-multires", action="store_true")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="tables and confusion heatmaps from a results directory")
    rep.add_argument("results")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"solver aborted: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, jsonschema.ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
