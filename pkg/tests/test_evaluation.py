import itertools
import json

import numpy as np
import pytest

from sdc.calibration import CalibrationState
from sdc.data import LabelSpace
from sdc.evaluation import (
    compute_metrics,
    entropy_report,
    h_score,
    hungarian_map,
)


def test_h_score_published_rows():
    # Fixed points reported for the method on its three benchmarks.
    assert h_score(82.16, 61.14) == pytest.approx(70.11, abs=0.01)
    assert h_score(82.08, 77.66) == pytest.approx(79.81, abs=0.01)
    assert h_score(94.12, 82.02) == pytest.approx(87.65, abs=0.01)


def test_h_score_fixed_point_and_symmetry():
    assert h_score(55.5, 55.5) == pytest.approx(55.5, abs=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(0, 100, size=2)
        assert h_score(a, b) == pytest.approx(h_score(b, a), abs=1e-12)
        assert h_score(a, b) <= 2 * min(a, b) + 1e-12
        assert h_score(a, b) >= min(a, b) - 1e-12


def test_h_score_zero_cases():
    assert h_score(0.0, 0.0) == 0.0
    assert h_score(0.0, 50.0) == 0.0


def test_hungarian_map_identity():
    preds = np.array([0, 1, 2, 0, 1, 2])
    mapping = hungarian_map(preds, preds, 3)
    assert mapping.tolist() == [0, 1, 2]


def test_hungarian_map_recovers_permutation():
    rng = np.random.default_rng(1)
    gts = rng.integers(0, 5, size=200)
    perm = rng.permutation(5)
    preds = np.argsort(perm)[gts]  # cluster id c means category perm... inverse
    mapping = hungarian_map(preds, gts, 5)
    np.testing.assert_array_equal(mapping[preds], gts)


def test_hungarian_map_contingency_case():
    # contingency [[5,0,0],[0,0,5],[0,5,0]] -> 0->0, 1->2, 2->1
    preds = np.array([0] * 5 + [1] * 5 + [2] * 5)
    gts = np.array([0] * 5 + [2] * 5 + [1] * 5)
    mapping = hungarian_map(preds, gts, 3)
    assert mapping.tolist() == [0, 2, 1]


def test_hungarian_map_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(20):
        k = int(rng.integers(2, 5))
        preds = rng.integers(0, k, size=60)
        gts = rng.integers(0, k, size=60)
        mapping = hungarian_map(preds, gts, k)
        acc = (mapping[preds] == gts).mean()
        best = max(
            (np.take(p, preds) == gts).mean()
            for p in itertools.permutations(range(k))
        )
        assert acc == pytest.approx(best)


def test_accuracy_invariant_to_cluster_relabeling():
    rng = np.random.default_rng(3)
    k = 4
    preds = rng.integers(0, k, size=100)
    gts = rng.integers(0, k, size=100)
    base = hungarian_map(preds, gts, k)
    base_acc = (base[preds] == gts).mean()
    for _ in range(10):
        perm = rng.permutation(k)
        shuffled = perm[preds]
        mapping = hungarian_map(shuffled, gts, k)
        assert (mapping[shuffled] == gts).mean() == pytest.approx(base_acc)


def space(m, n):
    return LabelSpace(num_known=m, num_novel=n)


def test_compute_metrics_perfect_predictions():
    gts = np.array([0, 0, 1, 2, 2, 3])
    report = compute_metrics(gts, gts, space(2, 2))
    assert report.acc_known == 100.0
    assert report.acc_novel == 100.0
    assert report.h_score == 100.0
    assert all(v == 0 for v in report.quadrants.values())


def test_compute_metrics_quadrants_partition():
    rng = np.random.default_rng(4)
    m, k = 3, 5
    gts = rng.integers(0, k, size=300)
    preds = rng.integers(0, k, size=300)
    report = compute_metrics(preds, gts, space(m, k - m))
    total = (
        sum(report.quadrants.values())
        + report.correct_known
        + report.correct_novel
    )
    assert total == report.n_test
    # error counts equal n_test * (1 - overall accuracy)
    overall_correct = report.correct_known + report.correct_novel
    assert sum(report.quadrants.values()) == report.n_test - overall_correct


def test_compute_metrics_quadrant_sides():
    # known gt 0 predicted as novel 2: kn. novel gt 2 predicted known 1: nk.
    gts = np.array([0, 2])
    preds = np.array([2, 1])
    report = compute_metrics(preds, gts, space(2, 1))
    assert report.quadrants == {"kk": 0, "kn": 1, "nk": 1, "nn": 0}


def test_compute_metrics_requires_ground_truth():
    with pytest.raises(ValueError):
        compute_metrics(np.array([0]), np.array([-1]), space(1, 1))


def test_compute_metrics_requires_bijection():
    with pytest.raises(ValueError):
        compute_metrics(
            np.array([0, 1]), np.array([0, 1]), space(1, 1),
            mapping=np.array([0, 0]),
        )


def test_report_json_shape():
    gts = np.array([0, 1, 1, 0])
    report = compute_metrics(gts, gts, space(1, 1), mode="classifier")
    payload = json.loads(report.to_json())
    assert set(payload) == {"h_score", "known", "novel", "quadrants", "n_test", "mode"}
    assert set(payload["quadrants"]) == {"kk", "kn", "nk", "nn"}
    assert payload["mode"] == "classifier"
    table = report.to_table()
    assert "H-score" in table and "Known" in table and "Novel" in table


def make_state(entropies, m=3):
    n = len(entropies)
    return CalibrationState(
        biased_logits=np.zeros((n, m)),
        entropies=np.asarray(entropies, dtype=np.float64),
        transfer=np.full((m, 2), 0.5),
        beta=0.1,
    )


def test_entropy_report_uniform_case():
    state = make_state([np.log(3)] * 6, m=3)
    gts = np.array([0, 1, 2, 3, 3, 4])
    summary = entropy_report(state, gts, space(3, 2))
    assert summary.mean_known == pytest.approx(np.log(3), abs=1e-12)
    assert summary.mean_novel == pytest.approx(np.log(3), abs=1e-12)
    assert summary.gap == pytest.approx(0.0, abs=1e-12)


def test_entropy_report_extreme_separation():
    # known rows one-hot confident (entropy 0), novel rows uniform (log m)
    m = 3
    ents = [0.0, 0.0, np.log(m), np.log(m)]
    state = make_state(ents, m=m)
    gts = np.array([0, 1, 3, 4])
    summary = entropy_report(state, gts, space(m, 2))
    assert summary.gap == pytest.approx(np.log(m), abs=1e-12)


def test_entropy_report_empty_group_errors():
    state = make_state([0.1, 0.2], m=3)
    with pytest.raises(ValueError):
        entropy_report(state, np.array([0, 1]), space(3, 2))
