import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

import oracles
from emsynth.corpus import peak_sets
from emsynth.evaluation import (
    PlanError,
    auc_from_roc,
    default_tau_grid,
    fold_scores,
    ned,
    ned_matrix,
    plan_folds,
    roc_sweep,
    run_experiment,
    similarity_study,
    write_similarity_csv,
)

FULL_COUNTS = {"A": 1000, "B": 1000, "easy": 1000, "hard": 1000, "synthetic_B": 1000}


def test_tau_grid():
    g = default_tau_grid()
    assert len(g) == 1001
    assert g[0] == 0.0 and g[-1] == 1.0
    assert np.allclose(np.diff(g), 0.001)


@pytest.mark.parametrize("experiment", ["real_trained", "synthetic_trained"])
def test_fold_plan_counts_and_disjointness(experiment):
    plans = plan_folds(FULL_COUNTS, "easy", experiment)
    assert len(plans) == 10
    for plan in plans:
        for c in ("A", "B"):
            assert len(plan.train[c]) == 450
            assert len(plan.test_normal[c]) == 50
            if plan.train_sources[c] == c:
                assert not set(plan.train[c]) & set(plan.test_normal[c])
        assert len(plan.test_anomalous) == 100
    assert plans[0].train_sources["B"] == ("synthetic_B" if experiment == "synthetic_trained" else "B")
    for c in ("A", "B"):
        tests = np.concatenate([p.test_normal[c] for p in plans])
        assert len(set(tests)) == 500
    mal = np.concatenate([p.test_anomalous for p in plans])
    assert len(set(mal)) == 1000


def test_fold_plan_seeded():
    a = plan_folds(FULL_COUNTS, "hard", seed=3)
    b = plan_folds(FULL_COUNTS, "hard", seed=3)
    c = plan_folds(FULL_COUNTS, "hard", seed=4)
    assert all(np.array_equal(x.test_normal["A"], y.test_normal["A"]) for x, y in zip(a, b))
    assert not all(np.array_equal(x.test_normal["A"], y.test_normal["A"]) for x, y in zip(a, c))


@pytest.mark.parametrize("kwargs", [
    {"anomaly_case": "medium"},
    {"anomaly_case": "easy", "experiment": "hybrid"},
    {"anomaly_case": "easy", "folds": 11},
])
def test_fold_plan_errors(kwargs):
    with pytest.raises(PlanError):
        plan_folds(FULL_COUNTS, **kwargs)


def test_synthetic_plan_needs_synthetic_set():
    counts = dict(FULL_COUNTS)
    del counts["synthetic_B"]
    with pytest.raises(PlanError, match="synthetic_B"):
        plan_folds(counts, "easy", "synthetic_trained")


def test_roc_monotone():
    rng = np.random.default_rng(2)
    scores = rng.random(300)
    labels = rng.random(300) < 0.4
    sweep = roc_sweep(scores, labels, default_tau_grid())
    assert np.all(np.diff(sweep["tpr"]) >= 0)
    assert np.all(np.diff(sweep["fpr"]) >= 0)


def test_identical_scores_give_half_auc():
    labels = np.array([True] * 10 + [False] * 10)
    sweep = roc_sweep(np.full(20, 0.5), labels, default_tau_grid())
    assert auc_from_roc(sweep["fpr"], sweep["tpr"]) == pytest.approx(0.5)


def test_single_tau_zero_point():
    labels = np.array([True, False, False])
    sweep = roc_sweep(np.array([0.2, 0.5, 0.9]), labels, [0.0])
    assert (sweep["fpr"][0], sweep["tpr"][0]) == (0.0, 0.0)
    assert auc_from_roc(sweep["fpr"], sweep["tpr"]) == pytest.approx(0.5)


def test_perfect_separation():
    labels = np.array([True] * 5 + [False] * 5)
    scores = np.array([0.01] * 5 + [0.9] * 5)
    sweep = roc_sweep(scores, labels, default_tau_grid())
    assert auc_from_roc(sweep["fpr"], sweep["tpr"]) == 1.0
    assert sweep["acc"].max() == 1.0
    assert sweep["f1"].max() == 1.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(10, 200))
def test_auc_agrees_with_sklearn(seed, n):
    rng = np.random.default_rng(seed)
    labels = rng.random(n) < 0.5
    if labels.all() or not labels.any():
        labels[0] = not labels[0]
    # scores on the tau grid so the sweep visits every distinct threshold
    scores = np.round(rng.random(n) * 0.6 + 0.4 * ~labels * rng.random(n), 3)
    sweep = roc_sweep(scores, labels, default_tau_grid())
    ours = auc_from_roc(sweep["fpr"], sweep["tpr"])
    assert ours == pytest.approx(roc_auc_score(labels, -scores), abs=1e-9)


def test_ned_examples():
    a = np.array([1.0, 2.0, 3.0, 5.0])
    assert ned(a, a) == 0.0
    assert ned(a, a + 7.5) == pytest.approx(0.0, abs=1e-12)
    assert ned(a, -a) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        ned(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        ned(np.ones(3), np.ones(4))


def test_ned_matches_oracle():
    rng = np.random.default_rng(5)
    A, B = rng.normal(size=(6, 9)), rng.normal(size=(4, 9))
    M = ned_matrix(A, B)
    for i in range(6):
        for j in range(4):
            assert M[i, j] == pytest.approx(oracles.ned(A[i].tolist(), B[j].tolist()), abs=1e-12)
            assert M[i, j] == pytest.approx(ned(A[i], B[j]), abs=1e-12)


def test_similarity_self_is_zero_with_one_neighbor():
    X = np.random.default_rng(1).normal(size=(30, 8))
    res = similarity_study(X, {"self": X}, neighbors=1)["self"]
    assert res["max"] == pytest.approx(0.0, abs=1e-7)


def test_similarity_neighbors_validated():
    X = np.random.default_rng(1).normal(size=(10, 4))
    with pytest.raises(ValueError):
        similarity_study(X, {"r": X[:5]}, neighbors=6)


def test_similarity_ordering_small(small_corpus):
    sets = peak_sets(small_corpus, ["synthetic_B", "A", "B", "easy", "hard"], 20)
    syn = sets.pop("synthetic_B")
    study = similarity_study(syn, sets, neighbors=25)
    assert study["B"]["mean"] < study["A"]["mean"] < study["hard"]["mean"] < study["easy"]["mean"]
    for res in study.values():
        assert res["min"] <= res["q1"] <= res["median"] <= res["q3"] <= res["max"]


def test_similarity_csv(tmp_path):
    X = np.random.default_rng(1).normal(size=(5, 4))
    write_similarity_csv(similarity_study(X, {"r": X}, neighbors=2), tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "set,index,score"
    assert len(lines) == 6


SMALL = dict(folds=10, test_per_class=20, test_anomalous=20)


@pytest.mark.parametrize("experiment", ["real_trained", "synthetic_trained"])
def test_small_experiment(small_corpus, experiment):
    report = run_experiment(small_corpus, experiment, "easy", kappa=5, **SMALL)
    assert len(report.per_fold) == 10
    assert report.averages["auc"] > 0.9
    assert 0 <= report.averages["acc"] <= 1


def test_experiment_reproducible(small_corpus, tmp_path):
    a = run_experiment(small_corpus, "real_trained", "hard", kappa=5, **SMALL)
    b = run_experiment(small_corpus, "real_trained", "hard", kappa=5, **SMALL)
    assert a.to_json() == b.to_json()
    a.write_roc_csv(tmp_path / "roc.csv")
    assert (tmp_path / "roc.csv").read_text().startswith("fold,fpr,tpr")


def test_fold_scores_shape(small_corpus):
    counts = {k: len(v) for k, v in small_corpus.traces.items()}
    plan = plan_folds(counts, "easy", **SMALL)[0]
    pv, labels, origin = fold_scores(small_corpus, plan, "easy", kappa=5)
    assert pv.shape == (60, 2)
    assert labels.sum() == 20
    assert set(origin.tolist()) == {0, 1, -1}
    # benign test traces are accepted by their own path far more than by the other
    assert np.median(pv[origin == 0, 0]) > np.median(pv[origin == 0, 1])
    assert np.median(pv[origin == 1, 1]) > np.median(pv[origin == 1, 0])


def test_empty_tau_grid(small_corpus):
    with pytest.raises(PlanError):
        run_experiment(small_corpus, tau_grid=[], **SMALL)
