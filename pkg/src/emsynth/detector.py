"""Peak preprocessing and transductive k-NN anomaly detection with multi-path voting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .device import Trace

NORMAL = "normal"
ANOMALOUS = "anomalous"


class DimensionError(ValueError):
    pass


class ParameterError(ValueError):
    pass


@dataclass
class PeakVector:
    peaks: np.ndarray
    path_cycles: int

    def __post_init__(self):
        self.peaks = np.asarray(self.peaks, dtype=float)
        if self.peaks.shape != (self.path_cycles,):
            raise DimensionError(f"expected {self.path_cycles} peaks, got shape {self.peaks.shape}")


def _fit_length(samples: np.ndarray, n: int) -> np.ndarray:
    if len(samples) >= n:
        return samples[:n]
    return np.concatenate([samples, np.zeros(n - len(samples))])


def preprocess(trace: Trace | np.ndarray, path_cycles: int, samples_per_cycle: int | None = None) -> PeakVector:
    """Cut the trace to the benign path length and keep the maximum of each cycle window.

    Longer traces are truncated, shorter ones zero-padded.
    """
    if isinstance(trace, Trace):
        samples = trace.samples
        samples_per_cycle = samples_per_cycle or trace.samples_per_cycle
    else:
        samples = np.asarray(trace, dtype=float)
    if samples_per_cycle is None:
        raise ParameterError("samples_per_cycle is required for raw sample arrays")
    if len(samples) < 1:
        raise ParameterError("trace has no samples")
    windowed = _fit_length(samples, path_cycles * samples_per_cycle)
    return PeakVector(windowed.reshape(path_cycles, samples_per_cycle).max(axis=1), path_cycles)


def peak_matrix(traces: Sequence[Trace], path_cycles: int, samples_per_cycle: int | None = None) -> np.ndarray:
    """Preprocess many traces into an (n, path_cycles) array."""
    if not traces:
        return np.empty((0, path_cycles))
    return np.stack([preprocess(t, path_cycles, samples_per_cycle).peaks for t in traces])


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        m = vectors.astype(float, copy=False)
    else:
        m = np.array([v.peaks if isinstance(v, PeakVector) else v for v in vectors], dtype=float)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise DimensionError("expected a set of equal-length vectors")
    return m


def strangeness(benign, queries=None, kappa: int = 10) -> np.ndarray:
    """Sum of Euclidean distances from each query to its ``kappa`` nearest benign vectors.

    With ``queries=None`` the members of ``benign`` are scored against the
    rest of the set, each excluding itself.
    """
    X = _as_matrix(benign)
    self_mode = queries is None
    Q = X if self_mode else _as_matrix(queries)
    if kappa < 1:
        raise ParameterError("kappa must be >= 1")
    if Q.shape[1] != X.shape[1]:
        raise DimensionError(f"query length {Q.shape[1]} != benign length {X.shape[1]}")
    available = X.shape[0] - 1 if self_mode else X.shape[0]
    if kappa > available:
        raise ParameterError(f"kappa={kappa} needs more than {available} benign vectors")
    D = cdist(Q, X)
    if self_mode:
        np.fill_diagonal(D, np.inf)
    nearest = np.sort(D, axis=1)[:, :kappa]
    # sequential left-to-right sum, smallest first
    return np.cumsum(nearest, axis=1)[:, -1]


@dataclass
class Baseline:
    path_id: int
    scores: np.ndarray
    kappa: int
    source: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.scores = np.sort(np.asarray(self.scores, dtype=float))
        if self.kappa < 1:
            raise ParameterError("kappa must be >= 1")

    @property
    def size(self) -> int:
        return len(self.scores)


def fingerprint(benign_sets: Sequence, kappa: int = 10, path_ids: Sequence[int] | None = None) -> list[Baseline]:
    """One baseline per execution path: sorted self-strangeness of its benign set."""
    path_ids = list(path_ids) if path_ids is not None else list(range(len(benign_sets)))
    out = []
    for pid, X in zip(path_ids, benign_sets):
        X = _as_matrix(X)
        out.append(Baseline(pid, strangeness(X, None, kappa), kappa, X))
    return out


def p_values(query_scores, baseline: Baseline | np.ndarray, literal: bool = False) -> np.ndarray:
    """Transductive p-value of each query score against a sorted baseline.

    Default: (1 + #{baseline >= score}) / (1 + n), so stranger queries get
    smaller p. ``literal=True`` counts #{score < baseline} and returns
    (1 + n - count) / (1 + n), which orders the other way round.
    """
    b = baseline.scores if isinstance(baseline, Baseline) else np.sort(np.asarray(baseline, dtype=float))
    s = np.atleast_1d(np.asarray(query_scores, dtype=float))
    n = len(b)
    if literal:
        index = n - np.searchsorted(b, s, side="right")
        return (1.0 + n - index) / (1.0 + n)
    index = n - np.searchsorted(b, s, side="left")
    return (1.0 + index) / (1.0 + n)


@dataclass
class Verdict:
    status: str
    votes: list[tuple[int, float, str]]
    tau: float

    @property
    def is_normal(self) -> bool:
        return self.status == NORMAL


def path_p_values(queries, baselines: Sequence[Baseline], benign_sets: Sequence | None = None,
                  kappa: int | None = None, literal: bool = False) -> np.ndarray:
    """(n_queries, n_paths) matrix of per-path p-values."""
    Q = _as_matrix(queries)
    cols = []
    for i, base in enumerate(baselines):
        X = base.source if benign_sets is None else _as_matrix(benign_sets[i])
        scores = strangeness(X, Q, kappa or base.kappa)
        cols.append(p_values(scores, base, literal))
    return np.column_stack(cols)


def vote(pvals: np.ndarray, tau: float) -> np.ndarray:
    """True where at least one path votes normal (p > tau)."""
    return (np.atleast_2d(pvals) > tau).any(axis=1)


def detect(q, baselines: Sequence[Baseline], benign_sets: Sequence | None = None,
           kappa: int | None = None, tau: float = 0.05, literal: bool = False) -> Verdict:
    """Vote normal on every path whose p-value exceeds ``tau``; normal if any path does.

    A raw Trace query is preprocessed separately to each path's length.
    """
    if not 0.0 <= tau <= 1.0:
        raise ParameterError("tau must be in [0, 1]")
    pv = []
    for i, base in enumerate(baselines):
        X = base.source if benign_sets is None else _as_matrix(benign_sets[i])
        if isinstance(q, Trace):
            qv = preprocess(q, X.shape[1]).peaks
        else:
            qv = q.peaks if isinstance(q, PeakVector) else q
        pv.append(p_values(strangeness(X, [qv], kappa or base.kappa), base, literal)[0])
    votes = [(b.path_id, float(p), NORMAL if p > tau else ANOMALOUS) for b, p in zip(baselines, pv)]
    status = NORMAL if any(v == NORMAL for _, _, v in votes) else ANOMALOUS
    return Verdict(status, votes, tau)


def save_baselines(baselines: Sequence[Baseline], path: str | Path) -> None:
    doc = {
        "schema": "emsynth.baselines/1",
        "baselines": [
            {"path_id": b.path_id, "kappa": b.kappa, "scores": b.scores.tolist(),
             "source_size": int(b.source.shape[0])}
            for b in baselines
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_baselines(path: str | Path, benign_sets: Sequence) -> list[Baseline]:
    doc = json.loads(Path(path).read_text())
    out = []
    for entry, X in zip(doc["baselines"], benign_sets, strict=True):
        X = _as_matrix(X)
        if X.shape[0] != entry["source_size"]:
            raise ParameterError(
                f"path {entry['path_id']}: baseline built from {entry['source_size']} vectors, got {X.shape[0]}"
            )
        out.append(Baseline(entry["path_id"], entry["scores"], entry["kappa"], X))
    return out
