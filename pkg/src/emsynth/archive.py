"""On-disk signal archives: a directory with ``manifest.json`` and little-endian float32 payloads."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .device import Trace
from .library import BlockLibrary, PairKey

LIBRARY_SCHEMA = "emsynth.library/1"
TRACES_SCHEMA = "emsynth.traces/1"
_F32 = np.dtype("<f4")


class ArchiveError(ValueError):
    pass


def _read_manifest(directory: Path, schema: str) -> dict:
    path = directory / "manifest.json"
    if not path.exists():
        raise ArchiveError(f"{directory}: no manifest.json")
    manifest = json.loads(path.read_text())
    if manifest.get("schema") != schema:
        raise ArchiveError(f"{directory}: expected schema {schema}, found {manifest.get('schema')}")
    return manifest


def _write_manifest(directory: Path, manifest: dict) -> None:
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def save_library(library: BlockLibrary, directory: str | Path) -> Path:
    directory = Path(directory)
    (directory / "blocks").mkdir(parents=True, exist_ok=True)
    index = []
    for i, (key, blocks) in enumerate(sorted(library.entries.items())):
        name = f"blocks/{i:05d}.f32"
        (directory / name).write_bytes(np.ascontiguousarray(blocks, dtype=_F32).tobytes())
        index.append({"prev": key.prev, "cur": key.cur, "file": name,
                      "n_blocks": int(blocks.shape[0]), "block_length": int(blocks.shape[1])})
    _write_manifest(directory, {
        "schema": LIBRARY_SCHEMA,
        "samples_per_cycle": library.samples_per_cycle,
        "catalog_digest": library.provenance.get("catalog_digest"),
        "config_digest": library.provenance.get("config_digest"),
        "provenance": library.provenance,
        "pairs": index,
    })
    return directory


def load_library(directory: str | Path) -> BlockLibrary:
    directory = Path(directory)
    manifest = _read_manifest(directory, LIBRARY_SCHEMA)
    entries = {}
    for item in manifest["pairs"]:
        raw = np.frombuffer((directory / item["file"]).read_bytes(), dtype=_F32)
        expected = item["n_blocks"] * item["block_length"]
        if raw.size != expected:
            raise ArchiveError(f"{item['file']}: {raw.size} values, manifest says {expected}")
        entries[PairKey(item["prev"], item["cur"])] = raw.reshape(item["n_blocks"], item["block_length"]).astype(float)
    return BlockLibrary(manifest["samples_per_cycle"], entries, manifest.get("provenance", {}))


def save_traces(traces: Sequence[Trace], directory: str | Path, name: str = "traces",
                meta: dict | None = None) -> Path:
    """Write a trace set; all traces must share samples_per_cycle and origin."""
    if not traces:
        raise ArchiveError("empty trace set")
    spc = {t.samples_per_cycle for t in traces}
    origins = {t.origin for t in traces}
    if len(spc) != 1 or len(origins) != 1:
        raise ArchiveError("mixed samples_per_cycle or origin in one trace set")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = np.concatenate([t.samples for t in traces]).astype(_F32)
    (directory / "traces.f32").write_bytes(payload.tobytes())
    _write_manifest(directory, {
        "schema": TRACES_SCHEMA,
        "name": name,
        "origin": origins.pop(),
        "samples_per_cycle": spc.pop(),
        "lengths": [len(t) for t in traces],
        "path_ids": [t.path_id for t in traces],
        "alignments": [t.alignment for t in traces],
        "meta": meta or {},
    })
    return directory


def load_traces(directory: str | Path) -> tuple[list[Trace], dict]:
    directory = Path(directory)
    manifest = _read_manifest(directory, TRACES_SCHEMA)
    raw = np.frombuffer((directory / "traces.f32").read_bytes(), dtype=_F32).astype(float)
    lengths = manifest["lengths"]
    if raw.size != sum(lengths):
        raise ArchiveError(f"{directory}: payload has {raw.size} samples, manifest says {sum(lengths)}")
    bounds = np.cumsum([0] + lengths)
    traces = [
        Trace(raw[a:b], manifest["samples_per_cycle"], manifest["origin"], pid, align)
        for a, b, pid, align in zip(bounds[:-1], bounds[1:], manifest["path_ids"], manifest["alignments"])
    ]
    return traces, manifest


def write_traces_csv(traces: Sequence[Trace], path: str | Path) -> None:
    """One trace per row; trigger indices go to ``<path>.trigger`` (one per line)."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        for t in traces:
            w.writerow([repr(float(x)) for x in t.samples])
    trigger_path(path).write_text("".join(f"{t.alignment or 0}\n" for t in traces))


def trigger_path(csv_path: str | Path) -> Path:
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.name + ".trigger")


def ingest_csv(path: str | Path, samples_per_cycle: int, triggers: str | Path | None = None) -> list[Trace]:
    """Read external captures: one trace per CSV row plus a trigger-index sidecar.

    Each trace is rotated so the loop start (trigger index) becomes sample 0.
    """
    path = Path(path)
    triggers = Path(triggers) if triggers is not None else trigger_path(path)
    if not triggers.exists():
        raise ArchiveError(f"{path}: trigger sidecar {triggers.name} is required")
    rows = []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row:
                continue
            try:
                rows.append(np.array([float(x) for x in row]))
            except ValueError:
                raise ArchiveError(f"{path}:{lineno}: non-numeric sample") from None
    idx = [int(x) for x in triggers.read_text().split()]
    if len(idx) != len(rows):
        raise ArchiveError(f"{triggers}: {len(idx)} trigger indices for {len(rows)} traces")
    out = []
    for samples, t in zip(rows, idx):
        if not 0 <= t < len(samples):
            raise ArchiveError(f"trigger index {t} outside trace of {len(samples)} samples")
        out.append(Trace(np.roll(samples, -t), samples_per_cycle, "ingested", None, 0))
    return out
