"""Ranking metrics for anomaly scores.

Anomalies are the positive class and a higher score means more anomalous.
Samples sharing a score cross the threshold together, so every curve has
one point per distinct score.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import EvaluationError


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise EvaluationError(f"{scores.shape[0]} scores but {labels.shape[0]} labels")
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("scores must be finite")
    if not np.all((labels == 0) | (labels == 1)):
        raise EvaluationError("labels must be 0 or 1")
    labels = labels.astype(int)
    if labels.sum() == 0 or labels.sum() == labels.size:
        raise EvaluationError("labels need at least one positive and one negative")
    return scores, labels


def _threshold_counts(scores, labels):
    """Cumulative (TP, FP) at each distinct threshold, highest threshold first."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # keep the last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    return tp[last], fp[last], s[last]


def precision_recall_curve(scores, labels):
    """Precision, recall and threshold per distinct score, thresholds descending.

    A sample is flagged at threshold ``t`` when ``score >= t``.
    """
    scores, labels = _check(scores, labels)
    tp, fp, thresholds = _threshold_counts(scores, labels)
    precision = tp / (tp + fp)
    recall = tp / labels.sum()
    return precision, recall, thresholds


def average_precision(scores, labels) -> float:
    """Step-wise area ``Σ_n (R_n - R_{n-1}) P_n`` with ``R_0 = 0``."""
    precision, recall, _ = precision_recall_curve(scores, labels)
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def roc_curve(scores, labels):
    """False- and true-positive rates per distinct threshold, starting at (0, 0)."""
    scores, labels = _check(scores, labels)
    tp, fp, thresholds = _threshold_counts(scores, labels)
    tpr = np.r_[0.0, tp / labels.sum()]
    fpr = np.r_[0.0, fp / (labels.size - labels.sum())]
    return fpr, tpr, np.r_[np.inf, thresholds]


def roc_auc(scores, labels) -> float:
    """Trapezoidal area under the ROC curve."""
    fpr, tpr, _ = roc_curve(scores, labels)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def anomaly_ranks(scores) -> np.ndarray:
    """1-based ranks, 1 = highest score; ties keep input order."""
    scores = np.asarray(scores, dtype=float)
    order = np.argsort(-scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=int)
    ranks[order] = np.arange(1, scores.size + 1)
    return ranks


@dataclass(frozen=True, eq=False)
class ScoreReport:
    """Per-sample anomaly scores with optional labels and the derived metrics."""

    ids: Sequence[str]
    scores: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        if len(self.ids) != scores.size:
            raise EvaluationError(f"{len(self.ids)} ids but {scores.size} scores")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "ids", tuple(self.ids))
        if self.labels is not None:
            _check(scores, self.labels)
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))

    @property
    def ranks(self):
        return anomaly_ranks(self.scores)

    def _need_labels(self):
        if self.labels is None:
            raise EvaluationError("metrics need labels")

    @property
    def average_precision(self) -> float:
        self._need_labels()
        return average_precision(self.scores, self.labels)

    @property
    def roc_auc(self) -> float:
        self._need_labels()
        return roc_auc(self.scores, self.labels)

    def pr_points(self):
        self._need_labels()
        return precision_recall_curve(self.scores, self.labels)

    def roc_points(self):
        self._need_labels()
        return roc_curve(self.scores, self.labels)

    def metrics(self) -> dict:
        self._need_labels()
        return {
            "n_samples": int(self.scores.size),
            "n_positive": int(self.labels.sum()),
            "average_precision": self.average_precision,
            "roc_auc": self.roc_auc,
        }


def stratified_split(labels, test_fraction=0.2, rng=None):
    """Seeded split keeping the label ratio; returns sorted ``(train, test)`` indices.

    ``labels=None`` or an int sample count gives a plain random split.
    """
    if not 0.0 < test_fraction < 1.0:
        raise EvaluationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(rng)
    if isinstance(labels, (int, np.integer)):
        labels = np.zeros(int(labels), dtype=int)
    labels = np.asarray(labels)
    train, test = [], []
    for value in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == value))
        n_test = int(round(test_fraction * idx.size))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
