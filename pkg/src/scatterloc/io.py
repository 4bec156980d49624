"""Binary containers for response sets and dictionaries.

A container is one JSON manifest line followed by raw little-endian float64
arrays.  The manifest lists each array's name, shape and byte offset
relative to the start of the payload, so files are self-describing and can
be read without this package::

    {"format": "scatterloc", "kind": "device", ..., "arrays": [...]}\\n
    <payload>
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .nmf import Dictionary
from .scatter import DirectionalResponseSet

__all__ = [
    "write_container",
    "read_container",
    "save_device",
    "load_device",
    "save_dictionary",
    "load_dictionary",
    "export_mags_csv",
    "write_trace_csv",
]

MAGIC = "scatterloc"
VERSION = 1


def write_container(path, kind: str, manifest: dict, arrays: dict) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = {"format": MAGIC, "version": VERSION, "kind": kind, **manifest, "arrays": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for b in blobs:
            fh.write(b)


def read_container(path, kind: str | None = None):
    """Return ``(manifest, arrays)`` of a container file."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: missing manifest line")
    header = json.loads(raw[:nl])
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a {MAGIC} container")
    if kind is not None and header.get("kind") != kind:
        raise ValueError(f"{path}: expected a {kind} file, found {header.get('kind')}")
    payload = memoryview(raw)[nl + 1 :]
    arrays = {}
    for e in header.pop("arrays"):
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        start = e["offset"]
        arrays[e["name"]] = np.frombuffer(payload[start : start + 8 * n], dtype="<f8").reshape(e["shape"]).copy()
    return header, arrays


def save_device(path, rset: DirectionalResponseSet) -> None:
    arrays = {"mags": rset.mags, "freq_axis": rset.freq_axis}
    manifest = {
        "label": rset.label,
        "sample_rate": rset.sample_rate,
        "window_len": rset.window_len,
        "azimuths_deg": rset.azimuths_deg.tolist(),
        "has_irs": rset.impulse_responses is not None,
    }
    if rset.impulse_responses is not None:
        manifest["ir_lengths"] = [int(h.size) for h in rset.impulse_responses]
        arrays["irs"] = np.concatenate(rset.impulse_responses)
    write_container(path, "device", manifest, arrays)


def load_device(path) -> DirectionalResponseSet:
    m, a = read_container(path, "device")
    irs = None
    if m["has_irs"]:
        bounds = np.cumsum([0] + m["ir_lengths"])
        irs = tuple(a["irs"][s:e] for s, e in zip(bounds[:-1], bounds[1:]))
    return DirectionalResponseSet(
        np.array(m["azimuths_deg"]), a["mags"], a["freq_axis"], m["sample_rate"], m["window_len"], irs, m["label"]
    )


def save_dictionary(path, W: Dictionary, **extra) -> None:
    arrays = {"atoms": W.atoms}
    if W.freq_axis is not None:
        arrays["freq_axis"] = W.freq_axis
    write_container(path, "dictionary", {"atom_meta": list(W.atom_meta), **extra}, arrays)


def load_dictionary(path) -> Dictionary:
    m, a = read_container(path, "dictionary")
    return Dictionary(a["atoms"], tuple(m["atom_meta"]), a.get("freq_axis"))


def export_mags_csv(path, rset: DirectionalResponseSet) -> None:
    """One row per direction, one column per frequency bin (the polar-pattern data)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["azimuth_deg"] + [f"{f:g}" for f in rset.freq_axis])
        for az, row in zip(rset.azimuths_deg, rset.mags):
            w.writerow([f"{az:g}"] + [repr(float(v)) for v in row])


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
