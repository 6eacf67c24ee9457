"""Percentile threshold search over validation reconstruction errors.

Candidate thresholds are the 1st..100th percentiles (nearest-rank) of the
combined validation errors, normal and anomalous together. A row is
classified anomalous when its error is strictly greater than the threshold.
The selected percentile maximises recall first, then precision among the
recall maximisers, then specificity among those; remaining ties go to the
smallest percentile and the full tie set is reported.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .metrics import confusion, compute_metrics

METRIC_COLUMNS = ["precision", "recall", "f1_score", "specificity", "accuracy"]


def nearest_rank_percentile(values, p):
    """Nearest-rank percentile: the value at rank ceil(p/100 * n) of the
    ascending sort, 0 < p <= 100."""
    values = np.sort(np.asarray(values, dtype=np.float64))
    n = len(values)
    if n == 0:
        raise ValueError("empty data")
    if not 0.0 < p <= 100.0:
        raise ValueError("percentile out of range: %r" % p)
    # p * n first: exact multiples of 100 stay exact under the division
    rank = max(1, math.ceil(p * n / 100.0))
    return float(values[rank - 1])


@dataclass
class PercentileTable:
    percentiles: list            # ints, ascending
    thresholds: list             # float per percentile
    metrics: list                # dict per percentile; absent values are None

    def row(self, percentile):
        i = self.percentiles.index(percentile)
        return self.thresholds[i], self.metrics[i]

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["percentile", "optimal_threshold"] + METRIC_COLUMNS)
            for p, thr, m in zip(self.percentiles, self.thresholds, self.metrics):
                w.writerow([p, repr(thr)]
                           + ["" if m[k] is None else repr(m[k])
                              for k in METRIC_COLUMNS])

    @classmethod
    def load_csv(cls, path):
        percentiles, thresholds, metrics = [], [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            needed = ["percentile", "optimal_threshold"] + METRIC_COLUMNS
            missing = [c for c in needed if c not in (reader.fieldnames or [])]
            if missing:
                raise DataError("%s: missing column(s) %s" % (path, missing))
            for row in reader:
                percentiles.append(int(row["percentile"]))
                thresholds.append(float(row["optimal_threshold"]))
                metrics.append({k: (None if row[k] == "" else float(row[k]))
                                for k in METRIC_COLUMNS})
        return cls(percentiles, thresholds, metrics)


@dataclass
class ThresholdResult:
    percentile: int
    threshold: float
    metrics: dict
    tie_set: list = field(default_factory=list)

    def to_json(self):
        return {"percentile": self.percentile,
                "threshold": self.threshold,
                "metrics": self.metrics,
                "tie_set": list(self.tie_set)}

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")


def build_table(errors, labels, percentiles=range(1, 101)):
    """Score every candidate percentile threshold on validation data.

    ``errors`` are reconstruction errors of the combined validation set and
    ``labels`` its 0/1 ground truth; both classes must be present.
    """
    errors = np.asarray(errors, dtype=np.float64)
    labels = np.asarray(labels)
    if errors.shape != labels.shape:
        raise DataError("errors and labels differ in length")
    if len(errors) == 0:
        raise DataError("empty validation set")
    if not ((labels == 0).any() and (labels == 1).any()):
        raise DataError("validation set must contain both classes")

    sorted_errors = np.sort(errors)
    n = len(sorted_errors)
    ps, thresholds, metric_rows = [], [], []
    for p in percentiles:
        rank = max(1, math.ceil(p * n / 100.0))
        thr = float(sorted_errors[rank - 1])
        predicted = np.where(errors > thr, 0, 1)
        metric_rows.append(compute_metrics(confusion(predicted, labels)))
        thresholds.append(thr)
        ps.append(int(p))
    return PercentileTable(ps, thresholds, metric_rows)


def _value(m, key):
    v = m.get(key)
    return -math.inf if v is None else v


def select_threshold(table):
    """Lexicographic (recall, precision, specificity) maximisation.

    Absent metrics compare as -inf. Returns the smallest percentile among
    the final ties, with the whole tie set attached.
    """
    if not table.percentiles:
        raise DataError("empty percentile table")
    idx = list(range(len(table.percentiles)))

    for key in ("recall", "precision", "specificity"):
        best = max(_value(table.metrics[i], key) for i in idx)
        idx = [i for i in idx if _value(table.metrics[i], key) == best]

    tie_set = sorted(table.percentiles[i] for i in idx)
    winner = min(idx, key=lambda i: table.percentiles[i])
    return ThresholdResult(table.percentiles[winner],
                           table.thresholds[winner],
                           dict(table.metrics[winner]),
                           tie_set)
