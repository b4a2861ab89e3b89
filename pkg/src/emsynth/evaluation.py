"""Cross-validated detection experiments, ROC/AUC metrics and the NED similarity study."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import BENIGN, Corpus
from .detector import fingerprint, path_p_values, peak_matrix

EXPERIMENTS = ("real_trained", "synthetic_trained")
CASES = ("easy", "hard")


class PlanError(ValueError):
    pass


def default_tau_grid() -> np.ndarray:
    return np.round(np.arange(1001) * 0.001, 3)


@dataclass
class FoldPlan:
    fold_index: int
    train: dict[str, np.ndarray]
    test_normal: dict[str, np.ndarray]
    test_anomalous: np.ndarray
    train_sources: dict[str, str] = field(default_factory=dict)


def plan_folds(counts: Mapping[str, int], anomaly_case: str, experiment: str = "real_trained",
               folds: int = 10, test_per_class: int = 50, test_anomalous: int = 100,
               seed: int = 0) -> list[FoldPlan]:
    """Seeded shuffle then contiguous slicing.

    Each benign class contributes ``folds * test_per_class`` traces; fold f
    tests on chunk f and trains on the remaining chunks. With
    ``experiment="synthetic_trained"`` the B training chunks come from the
    synthetic set while B test chunks stay real.
    """
    if experiment not in EXPERIMENTS:
        raise PlanError(f"unknown experiment {experiment!r}")
    if anomaly_case not in CASES:
        raise PlanError(f"unknown anomaly case {anomaly_case!r}")
    need = folds * test_per_class
    sources = {"A": "A", "B": "synthetic_B" if experiment == "synthetic_trained" else "B"}
    required = {"A": need, "B": need, anomaly_case: folds * test_anomalous, sources["B"]: need}
    for name, n in required.items():
        if counts.get(name, 0) < n:
            raise PlanError(f"corpus has {counts.get(name, 0)} traces of {name!r}, need {n}")

    rng = np.random.default_rng(seed)
    chunks = {}
    for name in dict.fromkeys(["A", "B", sources["B"]]):
        ids = rng.permutation(counts[name])[:need]
        chunks[name] = ids.reshape(folds, test_per_class)
    mal = rng.permutation(counts[anomaly_case])[: folds * test_anomalous].reshape(folds, test_anomalous)

    plans = []
    for f in range(folds):
        keep = np.arange(folds) != f
        train = {c: np.sort(chunks[sources[c]][keep].ravel()) for c in BENIGN}
        test = {c: np.sort(chunks[c][f]) for c in BENIGN}
        plans.append(FoldPlan(f, train, test, np.sort(mal[f]), dict(sources)))
    return plans


def roc_sweep(scores: np.ndarray, labels: np.ndarray, tau_grid: Sequence[float]) -> dict:
    """Sweep tau over "anomalous iff score <= tau" (score = largest per-path p-value).

    Positive class is anomalous.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    taus = np.asarray(tau_grid, dtype=float)
    pred = scores[None, :] <= taus[:, None]
    tp = (pred & labels).sum(axis=1)
    fp = (pred & ~labels).sum(axis=1)
    fn = (~pred & labels).sum(axis=1)
    tn = (~pred & ~labels).sum(axis=1)
    pos = max(int(labels.sum()), 1)
    neg = max(int((~labels).sum()), 1)
    tpr = tp / pos
    fpr = fp / neg
    acc = (tp + tn) / len(labels)
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(len(taus)), where=denom > 0)
    return {"tau": taus, "tpr": tpr, "fpr": fpr, "acc": acc, "f1": f1}


def auc_from_roc(fpr: np.ndarray, tpr: np.ndarray) -> float:
    """Trapezoidal area under the swept ROC, anchored at (0, 0) and (1, 1)."""
    pts = np.vstack([[0.0, 0.0], np.column_stack([fpr, tpr]), [1.0, 1.0]])
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]
    x, y = pts[:, 0], pts[:, 1]
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2))


@dataclass
class FoldResult:
    auc: float
    acc: float
    f1: float
    tau_acc: float
    tau_f1: float
    fpr_at_best: float
    roc: list[tuple[float, float]]


@dataclass
class EvalReport:
    experiment: str
    anomaly_case: str
    kappa: int
    per_fold: list[FoldResult]
    averages: dict[str, float]

    @property
    def roc_points(self) -> list[list[tuple[float, float]]]:
        return [f.roc for f in self.per_fold]

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "anomaly_case": self.anomaly_case,
            "kappa": self.kappa,
            "averages": self.averages,
            "per_fold": [
                {k: v for k, v in asdict(f).items() if k != "roc"} for f in self.per_fold
            ],
            "roc_points": [[list(p) for p in f.roc] for f in self.per_fold],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def write_roc_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fold", "fpr", "tpr"])
            for i, fold in enumerate(self.per_fold):
                for fpr, tpr in fold.roc:
                    w.writerow([i, repr(fpr), repr(tpr)])


def _peaks(corpus: Corpus, cache: dict, name: str, cycles: int) -> np.ndarray:
    if (name, cycles) not in cache:
        cache[name, cycles] = peak_matrix(corpus.traces[name], cycles)
    return cache[name, cycles]


def fold_scores(corpus: Corpus, plan: FoldPlan, anomaly_case: str, kappa: int,
                cache: dict | None = None, literal: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-path p-values for every test trace of one fold.

    Returns (p-value matrix, labels, benign-path index per test row or -1).
    """
    cache = {} if cache is None else cache
    cycles = [corpus.path_cycles[c] for c in BENIGN]
    benign = [_peaks(corpus, cache, plan.train_sources[c], cyc)[plan.train[c]] for c, cyc in zip(BENIGN, cycles)]
    baselines = fingerprint(benign, kappa, path_ids=range(len(BENIGN)))
    test_names = [(c, plan.test_normal[c]) for c in BENIGN] + [(anomaly_case, plan.test_anomalous)]
    cols = []
    for base, cyc in zip(baselines, cycles):
        q = np.vstack([_peaks(corpus, cache, name, cyc)[ids] for name, ids in test_names])
        cols.append(path_p_values(q, [base], kappa=kappa, literal=literal)[:, 0])
    pv = np.column_stack(cols)
    labels = np.concatenate([np.full(len(ids), name == anomaly_case) for name, ids in test_names])
    origin = np.concatenate([np.full(len(ids), i if name in BENIGN else -1)
                             for i, (name, ids) in enumerate(test_names)])
    return pv, labels, origin


def run_experiment(corpus: Corpus, experiment: str = "real_trained", anomaly_case: str = "easy",
                   kappa: int = 10, tau_grid: Sequence[float] | None = None, seed: int = 0,
                   folds: int = 10, test_per_class: int = 50, test_anomalous: int = 100,
                   literal: bool = False) -> EvalReport:
    tau_grid = default_tau_grid() if tau_grid is None else np.asarray(tau_grid, dtype=float)
    if tau_grid.size == 0:
        raise PlanError("tau grid is empty")
    counts = {name: len(ts) for name, ts in corpus.traces.items()}
    plans = plan_folds(counts, anomaly_case, experiment, folds, test_per_class, test_anomalous, seed)
    cache: dict = {}
    results = []
    for plan in plans:
        pv, labels, _ = fold_scores(corpus, plan, anomaly_case, kappa, cache, literal)
        sweep = roc_sweep(pv.max(axis=1), labels, tau_grid)
        i_acc = int(np.argmax(sweep["acc"]))
        i_f1 = int(np.argmax(sweep["f1"]))
        results.append(FoldResult(
            auc=auc_from_roc(sweep["fpr"], sweep["tpr"]),
            acc=float(sweep["acc"][i_acc]),
            f1=float(sweep["f1"][i_f1]),
            tau_acc=float(tau_grid[i_acc]),
            tau_f1=float(tau_grid[i_f1]),
            fpr_at_best=float(sweep["fpr"][i_acc]),
            roc=[(float(a), float(b)) for a, b in zip(sweep["fpr"], sweep["tpr"])],
        ))
    averages = {m: float(np.mean([getattr(r, m) for r in results])) for m in ("auc", "acc", "f1")}
    return EvalReport(experiment, anomaly_case, kappa, results, averages)


def ned(a, b) -> float:
    """Normalized Euclidean distance, sqrt(0.5 Var(a-b) / (Var(a)+Var(b))), population variances."""
    a = np.asarray(getattr(a, "peaks", a), dtype=float)
    b = np.asarray(getattr(b, "peaks", b), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    denom = np.var(a) + np.var(b)
    if denom == 0:
        raise ValueError("NED undefined for two constant vectors")
    return float(np.sqrt(0.5 * np.var(a - b) / denom))


def ned_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise NED between rows of A and rows of B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError("length mismatch")
    d = A.shape[1]
    Ac = A - A.mean(axis=1, keepdims=True)
    Bc = B - B.mean(axis=1, keepdims=True)
    va = (Ac**2).sum(axis=1) / d
    vb = (Bc**2).sum(axis=1) / d
    cov = Ac @ Bc.T / d
    denom = va[:, None] + vb[None, :]
    if np.any(denom == 0):
        raise ValueError("NED undefined for two constant vectors")
    vdiff = np.clip(denom - 2 * cov, 0.0, None)
    return np.sqrt(0.5 * vdiff / denom)


def similarity_study(synthetic: np.ndarray, real_sets: Mapping[str, np.ndarray],
                     neighbors: int = 25) -> dict[str, dict]:
    """For each synthetic vector, mean NED to its ``neighbors`` closest members of each real set."""
    out = {}
    for name, real in real_sets.items():
        real = np.atleast_2d(real)
        if neighbors > real.shape[0] or neighbors < 1:
            raise ValueError(f"neighbors={neighbors} outside [1, {real.shape[0]}] for set {name!r}")
        D = ned_matrix(synthetic, real)
        scores = np.sort(D, axis=1)[:, :neighbors].mean(axis=1)
        q1, med, q3 = np.percentile(scores, [25, 50, 75])
        out[name] = {
            "scores": scores,
            "mean": float(scores.mean()),
            "median": float(med),
            "q1": float(q1),
            "q3": float(q3),
            "min": float(scores.min()),
            "max": float(scores.max()),
        }
    return out


def write_similarity_csv(study: Mapping[str, dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set", "index", "score"])
        for name, res in study.items():
            for i, s in enumerate(res["scores"]):
                w.writerow([name, i, repr(float(s))])
