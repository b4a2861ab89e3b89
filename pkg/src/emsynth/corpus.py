"""Reference programs (original, updated, two injected variants) and corpus generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .archive import load_library, load_traces, save_library, save_traces
from .detector import peak_matrix
from .device import EmissionConfig, Trace, capture_set
from .isa import Catalog, ExecutionPath, default_catalog, inject, parse_instructions, parse_program, position_after, single_path
from .library import BlockLibrary, build_library, corpus_pairs
from .synth import synthesize_set

PROGRAM_FILES = {
    "A": "program_a.asm",
    "B": "program_b.asm",
    "easy": "malicious_easy.asm",
    "hard": "malicious_hard.asm",
}
BENIGN = ("A", "B")
INJECTION_SITE = "add r1, r2"
PAYLOADS = {
    "easy": "asr r3\ncom r3\nadc r3, r2\nsbc r3, r2\n",
    "hard": "asr r3\ncom r3\n",
}


def program_source(name: str) -> str:
    return resources.files("emsynth.data.programs").joinpath(PROGRAM_FILES[name]).read_text()


def reference_paths(catalog: Catalog | None = None) -> dict[str, ExecutionPath]:
    """Taken-branch paths of the four reference programs; A and B get path ids 0 and 1."""
    catalog = catalog or default_catalog()
    out = {}
    for i, name in enumerate(PROGRAM_FILES):
        program = parse_program(program_source(name), name=name, catalog=catalog)
        path = single_path(program, catalog)
        out[name] = ExecutionPath(program, path.instructions, i)
    return out


def injected_path(benign: ExecutionPath, case: str, catalog: Catalog | None = None) -> ExecutionPath:
    payload = parse_instructions(PAYLOADS[case], catalog)
    return inject(benign, position_after(benign, INJECTION_SITE), payload)


@dataclass
class Corpus:
    traces: dict[str, list[Trace]]
    path_cycles: dict[str, int]
    library: BlockLibrary | None = None
    meta: dict = field(default_factory=dict)

    def count(self, name: str) -> int:
        return len(self.traces.get(name, ()))


def make_corpus(config: EmissionConfig, n: int = 1000, library_examples: int = 1000,
                catalog: Catalog | None = None, seed: int = 0, synthetic: bool = True) -> Corpus:
    """Simulated captures of A, B, easy, hard plus (optionally) synthetic B."""
    catalog = catalog or default_catalog()
    paths = reference_paths(catalog)
    traces = {name: capture_set(path, config, n) for name, path in paths.items()}
    library = None
    if synthetic:
        library = build_library(corpus_pairs([paths["B"]]), config, library_examples, catalog)
        traces["synthetic_B"] = synthesize_set(paths["B"], library, n, seed)
    cycles = {name: paths[name].cycles for name in BENIGN}
    return Corpus(traces, cycles, library, {"config_digest": config.digest(), "seed": seed, "n": n})


def save_corpus(corpus: Corpus, directory: str | Path) -> Path:
    directory = Path(directory)
    for name, traces in corpus.traces.items():
        meta = {"path_cycles": corpus.path_cycles.get(name.removeprefix("synthetic_"))}
        save_traces(traces, directory / name, name=name, meta=meta)
    if corpus.library is not None:
        save_library(corpus.library, directory / "library")
    return directory


def load_corpus(directory: str | Path) -> Corpus:
    directory = Path(directory)
    traces, cycles = {}, {}
    for sub in sorted(p for p in directory.iterdir() if (p / "traces.f32").exists()):
        ts, manifest = load_traces(sub)
        traces[sub.name] = ts
        pc = manifest.get("meta", {}).get("path_cycles")
        if sub.name in BENIGN and pc:
            cycles[sub.name] = int(pc)
    library = load_library(directory / "library") if (directory / "library").exists() else None
    return Corpus(traces, cycles, library)


def peak_sets(corpus: Corpus, names, path_cycles: int) -> dict[str, np.ndarray]:
    return {name: peak_matrix(corpus.traces[name], path_cycles) for name in names}
