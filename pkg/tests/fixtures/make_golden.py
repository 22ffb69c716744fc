"""Regenerate the golden evaluate fixture from the exact-arithmetic oracles.

Run from the repository root: ``python3 tests/fixtures/make_golden.py``.
"""

import csv
import json
import os
import sys

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.dirname(HERE))

import oracles  # noqa: E402


def main():
    rng = np.random.default_rng(20240601)
    n = 40
    labels = (rng.uniform(size=n) < 0.25).astype(int)
    # quarter-unit grid so several scores tie
    scores = np.round(rng.normal(size=n) * 4 + 3 * labels) / 4
    ids = [f"r{i:02d}" for i in range(n)]
    with open(os.path.join(HERE, "golden_scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "score", "rank"])
        order = sorted(range(n), key=lambda i: -scores[i])
        rank = {i: r + 1 for r, i in enumerate(order)}
        for i in range(n):
            w.writerow([ids[i], repr(float(scores[i])), rank[i]])
    # labels written in a different order than the scores
    with open(os.path.join(HERE, "golden_labels.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for i in reversed(range(n)):
            w.writerow([ids[i], int(labels[i])])
    s, y = [float(v) for v in scores], [int(v) for v in labels]
    golden = {
        "n_samples": n,
        "n_positive": int(labels.sum()),
        "average_precision": float(oracles.sweep_ap(s, y)),
        "roc_auc": float(oracles.pair_auc(s, y)),
        "average_precision_exact": str(oracles.sweep_ap(s, y)),
        "roc_auc_exact": str(oracles.pair_auc(s, y)),
    }
    with open(os.path.join(HERE, "golden_metrics.json"), "w") as fh:
        json.dump(golden, fh, indent=1, sort_keys=True)
        fh.write("\n")


if __name__ == "__main__":
    main()
