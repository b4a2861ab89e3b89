"""Synthetic traces assembled from library blocks."""

from __future__ import annotations

import numpy as np

from .device import Trace
from .isa import ExecutionPath
from .library import BlockLibrary, CoverageError, pairs_of, sample_block


def synthesize(path: ExecutionPath, library: BlockLibrary, rng: np.random.Generator) -> Trace:
    """Concatenate one randomly drawn block per consecutive pair of ``path``.

    If the library was captured with a capture-window overrun, the same
    number of samples is appended from the start of the next iteration
    (fresh draws), so synthetic and captured traces have equal length.
    """
    keys = pairs_of(path)
    missing = library.missing(keys)
    if missing:
        raise CoverageError(missing)
    parts = [sample_block(library, k, rng).samples for k in keys]
    overrun = library.overrun_samples
    i = 0
    while overrun > 0:
        block = sample_block(library, keys[i % len(keys)], rng).samples
        parts.append(block[:overrun])
        overrun -= len(block)
        i += 1
    return Trace(np.concatenate(parts).astype(float), library.samples_per_cycle,
                 "synthetic", path.path_id, 0)


def synthesize_set(path: ExecutionPath, library: BlockLibrary, n: int, seed: int) -> list[Trace]:
    if n < 1:
        raise ValueError("n must be >= 1")
    # one independent stream per trace keeps the set independent of generation order
    return [synthesize(path, library, np.random.default_rng([seed, i])) for i in range(n)]
