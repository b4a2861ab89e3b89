"""Database of predecessor-conditioned signal blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .device import EmissionConfig, capture_set
from .isa import (
    TAKEN_SUFFIX,
    Catalog,
    ExecutionPath,
    Program,
    default_catalog,
    flatten_paths,
)


class PairKey(NamedTuple):
    """Signal key of the previous and current instruction (``breq.taken`` for taken branches)."""

    prev: str
    cur: str

    def __str__(self) -> str:
        return f"({self.prev}|{self.cur})"


class CoverageError(LookupError):
    """Library lacks one or more required pairs."""

    def __init__(self, missing: Sequence[PairKey]):
        self.missing = list(missing)
        super().__init__("library is missing pair(s): " + ", ".join(str(k) for k in self.missing))


@dataclass(frozen=True)
class SignalBlock:
    key: PairKey
    samples: np.ndarray
    capture_id: int


@dataclass
class BlockLibrary:
    samples_per_cycle: int
    entries: dict[PairKey, np.ndarray]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for key, blocks in self.entries.items():
            if blocks.ndim != 2 or blocks.shape[0] == 0:
                raise ValueError(f"entry {key} must be a non-empty (n_blocks, length) array")
            if blocks.shape[1] % self.samples_per_cycle:
                raise ValueError(f"entry {key}: block length {blocks.shape[1]} is not whole cycles")

    def __contains__(self, key) -> bool:
        return PairKey(*key) in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self) -> list[PairKey]:
        return list(self.entries)

    def blocks(self, key) -> list[SignalBlock]:
        key = PairKey(*key)
        return [SignalBlock(key, row, i) for i, row in enumerate(self.entries[key])]

    @property
    def overrun_samples(self) -> int:
        return int(self.provenance.get("overrun_samples", 0))

    def missing(self, keys: Iterable) -> list[PairKey]:
        out = []
        for k in keys:
            k = PairKey(*k)
            if k not in self.entries and k not in out:
                out.append(k)
        return out


def _mnemonic(token: str) -> str:
    return token[: -len(TAKEN_SUFFIX)] if token.endswith(TAKEN_SUFFIX) else token


def _dummy_operands(kinds: Sequence[str], label: str) -> list[str]:
    fill = {"r": "r16", "d": "r16", "k": "1", "p": "portb", "b": "0", "l": label}
    return [fill[k] for k in kinds]


def pairs_of(path: ExecutionPath) -> list[PairKey]:
    """Consecutive pairs of the path; the first instruction's predecessor is the last one."""
    ins = path.instructions
    if not ins:
        raise ValueError("empty execution path")
    return [PairKey(ins[i - 1].signal_key, ins[i].signal_key) for i in range(len(ins))]


def corpus_pairs(paths: Iterable[ExecutionPath]) -> list[PairKey]:
    out: list[PairKey] = []
    seen = set()
    for p in paths:
        for k in pairs_of(p):
            if k not in seen:
                seen.add(k)
                out.append(k)
    return out


def full_pairs(catalog: Catalog | None = None) -> list[PairKey]:
    catalog = catalog or default_catalog()
    ms = catalog.mnemonics
    return [PairKey(a, b) for a in ms for b in ms]


def fingerprint_programs(pairs: Iterable, pad: int = 4,
                         catalog: Catalog | None = None) -> list[Program]:
    """One nop-isolated program per pair: ``pad`` nops, prev, cur, ``pad`` nops.

    Branch instructions target the instruction right after them, so the
    taken and not-taken variants execute the same straight-line sequence.
    """
    if pad < 2:
        raise ValueError("pad must be >= 2")
    catalog = catalog or default_catalog()
    nop = catalog.instruction("nop")
    programs = []
    for key in sorted({PairKey(*p) for p in pairs}):
        body = [nop] * pad
        labels = {"loop": 0}
        for slot, token in enumerate(key):
            mn = _mnemonic(token)
            entry = catalog[mn]
            if token != mn and not entry.conditional:
                raise ValueError(f"{mn} has no taken variant")
            label = f"next{slot}"
            labels[label] = pad + slot + 1
            body.append(catalog.instruction(mn, _dummy_operands(entry.operands, label)))
        body += [nop] * pad
        programs.append(Program(f"pair_{key.prev}_{key.cur}", (), tuple(body), labels))
    return programs


def _fingerprint_path(program: Program, key: PairKey, pad: int, catalog: Catalog) -> ExecutionPath:
    res = {}
    for slot, token in enumerate(key):
        if catalog[_mnemonic(token)].conditional:
            res[pad + slot] = token.endswith(TAKEN_SUFFIX)
    return flatten_paths(program, res, catalog)[0]


def build_library(pairs: Iterable, config: EmissionConfig, examples_per_pair: int,
                  catalog: Catalog | None = None, pad: int = 4) -> BlockLibrary:
    """Capture ``examples_per_pair`` fingerprint traces per pair and cut out the current block."""
    if examples_per_pair < 1:
        raise ValueError("examples_per_pair must be >= 1")
    catalog = catalog or default_catalog()
    keys = sorted({PairKey(*p) for p in pairs})
    programs = fingerprint_programs(keys, pad, catalog)
    spc = config.samples_per_cycle
    entries = {}
    for key, program in zip(keys, programs):
        path = _fingerprint_path(program, key, pad, catalog)
        cur = path.instructions[pad + 1]
        offset = sum(i.cycles for i in path.instructions[: pad + 1]) * spc
        length = cur.cycles * spc
        blocks = np.empty((examples_per_pair, length))
        for k, trace in enumerate(capture_set(path, config, examples_per_pair)):
            n = len(trace.samples)
            if length > n:
                raise RuntimeError(f"segmentation of {key} out of bounds: cycle table inconsistent")
            start = (trace.alignment or 0) + offset
            blocks[k] = np.take(trace.samples, np.arange(start, start + length), mode="wrap")
        entries[key] = blocks
    provenance = {
        "config_digest": config.digest(),
        "catalog_digest": catalog.digest(),
        "seed": config.seed,
        "overrun_samples": config.overrun_samples,
        "pad": pad,
        "examples_per_pair": examples_per_pair,
    }
    return BlockLibrary(spc, entries, provenance)


def sample_block(library: BlockLibrary, key, rng: np.random.Generator) -> SignalBlock:
    key = PairKey(*key)
    if key not in library.entries:
        raise CoverageError([key])
    blocks = library.entries[key]
    idx = int(rng.integers(blocks.shape[0]))
    return SignalBlock(key, blocks[idx], idx)
