import numpy as np
import pytest

from dpmix.errors import EvaluationError
from dpmix.metrics import (
    ScoreReport,
    anomaly_ranks,
    average_precision,
    precision_recall_curve,
    roc_auc,
    roc_curve,
    stratified_split,
)

import oracles


def test_perfect_ranking():
    p, r, _ = precision_recall_curve([0.9, 0.1], [1, 0])
    assert (1.0, 1.0) in zip(p, r)
    assert average_precision([0.9, 0.1], [1, 0]) == 1.0
    assert roc_auc([0.9, 0.1], [1, 0]) == 1.0


def test_all_scores_equal():
    p, r, t = precision_recall_curve([0.3] * 5, [1, 0, 0, 1, 0])
    assert len(p) == 1 and p[0] == 0.4 and r[0] == 1.0


def test_positive_ranked_last():
    assert average_precision([0.9, 0.1], [0, 1]) == 0.5


def test_reversed_ranking_matches_oracle():
    labels = [1, 1, 0, 0, 0, 0]
    scores = [1, 2, 3, 4, 5, 6]
    assert average_precision(scores, labels) == pytest.approx(float(oracles.sweep_ap(scores, labels)))
    assert average_precision(scores, labels) == pytest.approx((1 / 5 + 2 / 6) / 2)


def test_six_point_hand_case():
    scores = [0.9, 0.8, 0.8, 0.5, 0.3, 0.3]
    labels = [1, 0, 1, 0, 1, 0]
    p, r, t = precision_recall_curve(scores, labels)
    want = oracles.sweep_pr(scores, labels)
    assert len(want) == len(p)
    for (tw, pw, rw), pg, rg, tg in zip(want, p, r, t):
        assert tg == tw and pg == pytest.approx(float(pw)) and rg == pytest.approx(float(rw))


def test_random_cases_against_oracles():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 21))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.integers(0, 6, n).astype(float)  # plenty of ties
        assert average_precision(scores, labels) == pytest.approx(float(oracles.sweep_ap(list(scores), list(labels))), rel=1e-12)
        assert roc_auc(scores, labels) == pytest.approx(float(oracles.pair_auc(list(scores), list(labels))), rel=1e-12)


def test_random_scores_auc_near_half():
    rng = np.random.default_rng(1)
    labels = np.repeat([0, 1], 5000)
    assert abs(roc_auc(rng.uniform(size=10000), labels) - 0.5) < 0.02


def test_rank_invariance_and_complement():
    rng = np.random.default_rng(2)
    scores = rng.normal(size=50)
    labels = rng.integers(0, 2, 50)
    labels[:2] = [0, 1]
    assert average_precision(np.exp(scores), labels) == average_precision(scores, labels)
    assert roc_auc(3 * scores + 1, labels) == roc_auc(scores, labels)
    assert roc_auc(scores, labels) + roc_auc(-scores, labels) == pytest.approx(1.0, abs=1e-14)


def test_curve_monotone():
    rng = np.random.default_rng(3)
    scores, labels = rng.normal(size=40), rng.integers(0, 2, 40)
    labels[:2] = [0, 1]
    _, r, t = precision_recall_curve(scores, labels)
    assert np.all(np.diff(r) >= 0) and np.all(np.diff(t) < 0)
    fpr, tpr, _ = roc_curve(scores, labels)
    assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)


@pytest.mark.parametrize(
    "scores,labels",
    [([1, 2], [1, 1]), ([1, 2], [0, 0]), ([1, 2, 3], [0, 1]), ([1, np.nan], [0, 1]), ([1, 2], [0, 2])],
)
def test_errors(scores, labels):
    with pytest.raises(EvaluationError):
        average_precision(scores, labels)


def test_ranks_and_report():
    np.testing.assert_array_equal(anomaly_ranks([0.1, 5.0, 0.1, 3.0]), [3, 1, 4, 2])
    rep = ScoreReport(["a", "b", "c"], [0.2, 0.9, 0.1], [0, 1, 0])
    assert rep.metrics() == {"n_samples": 3, "n_positive": 1, "average_precision": 1.0, "roc_auc": 1.0}
    with pytest.raises(EvaluationError):
        ScoreReport(["a"], [0.1, 0.2])
    with pytest.raises(EvaluationError):
        ScoreReport(["a", "b"], [0.1, 0.2]).metrics()


def test_stratified_split():
    labels = np.r_[np.zeros(95, int), np.ones(5, int)]
    tr, te = stratified_split(labels, 0.2, 0)
    assert te.size == 20 and labels[te].sum() == 1
    assert np.intersect1d(tr, te).size == 0 and np.union1d(tr, te).size == 100
    tr2, te2 = stratified_split(labels, 0.2, 0)
    np.testing.assert_array_equal(te, te2)
    tr3, te3 = stratified_split(50, 0.2, 1)
    assert te3.size == 10
