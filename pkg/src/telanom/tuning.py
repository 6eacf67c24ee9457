"""Deterministic hyperparameter grid search.

Grids are explicit candidate lists per parameter. Candidates are evaluated
in canonical order (parameter names sorted, candidate values sorted), so the
result never depends on how the caller happened to order the lists; ties
keep the first candidate in canonical order.

Scoring: the classical detectors fit on the training rows (labels unused)
and are scored by F1 on the labelled validation rows. The autoencoder fits
on normal training rows only and is scored by the lexicographic
(recall, precision, specificity) outcome of its selected percentile
threshold on the validation rows. Absent metrics compare as -inf.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .autoencoder import Autoencoder, TrainConfig, train
from .detectors import IsolationForest, LocalOutlierFactor, Dbscan
from .errors import DataError
from .metrics import confusion, compute_metrics
from .thresholding import build_table, select_threshold

DEFAULT_GRIDS = {
    "iforest": {
        "contamination": [0.001, 0.02, 0.05, 0.3],
        "n_estimators": [100, 150, 200],
    },
    "lof": {
        "k": [5, 10, 20],
        "contamination": [0.01, 0.08, 0.1, 0.2],
    },
    "dbscan": {
        "eps": [0.5, 1.5, 2.0, 3.5, 5.0],
        "min_pts": [2, 4, 10],
    },
    "autoencoder": {
        "learning_rate": [0.001, 0.01, 0.1],
        "units": [4, 8, 16, 32, 64, 128],
        "bottleneck": [2, 4, 8],
        "batch_size": [128, 256, 512],
        "epochs": [20, 50],
    },
}


@dataclass
class GridSearchResult:
    model_kind: str
    best_params: dict
    best_score: tuple
    rows: list = field(default_factory=list)  # one dict per candidate

    def save_csv(self, path):
        if not self.rows:
            raise DataError("empty grid result")
        names = sorted(self.best_params)
        score_cols = [k for k in self.rows[0] if k not in names]
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(names + score_cols)
            for row in self.rows:
                w.writerow([row[k] for k in names]
                           + ["" if row[k] is None else row[k]
                              for k in score_cols])


def _canonical_candidates(grid):
    names = sorted(grid)
    lists = [sorted(grid[name]) for name in names]
    for combo in product(*lists):
        yield dict(zip(names, combo))


def _nn(v):
    return -math.inf if v is None else v


def _score_classical(kind, params, train_x, val_x, val_y, seed):
    if kind == "iforest":
        model = IsolationForest(
            n_estimators=params.get("n_estimators", 100),
            contamination=params.get("contamination", 0.001),
            subsample=params.get("subsample", 256),
            seed=seed)
    elif kind == "lof":
        model = LocalOutlierFactor(
            k=params.get("k", 5),
            contamination=params.get("contamination", 0.01))
    elif kind == "dbscan":
        model = Dbscan(eps=params.get("eps", 0.5),
                       min_pts=params.get("min_pts", 10))
    else:
        raise DataError("unknown model kind %r" % kind)
    model.fit(train_x)
    m = compute_metrics(confusion(model.predict(val_x), val_y))
    return (_nn(m["f1_score"]),), {"f1_score": m["f1_score"],
                                   "recall": m["recall"],
                                   "precision": m["precision"]}


def _score_autoencoder(params, train_x, val_x, val_y, seed):
    model = Autoencoder(train_x.shape[1],
                        units=params.get("units", 128),
                        bottleneck=params.get("bottleneck", 2),
                        seed=seed)
    cfg = TrainConfig(learning_rate=params.get("learning_rate", 0.001),
                      batch_size=params.get("batch_size", 512),
                      epochs=params.get("epochs", 50),
                      seed=seed)
    train(model, train_x, cfg)
    errors = model.scores(val_x)
    table = build_table(errors, val_y)
    sel = select_threshold(table)
    m = sel.metrics
    return ((_nn(m["recall"]), _nn(m["precision"]), _nn(m["specificity"])),
            {"recall": m["recall"], "precision": m["precision"],
             "specificity": m["specificity"], "percentile": sel.percentile})


def grid_search(model_kind, grid, train_x, val_x, val_y, seed=0):
    """Exhaustive search over a candidate grid; returns GridSearchResult.

    ``train_x``: training matrix (normal rows only for the autoencoder).
    ``val_x``/``val_y``: labelled validation rows, both classes present for
    the autoencoder path.
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    val_x = np.asarray(val_x, dtype=np.float64)
    val_y = np.asarray(val_y)
    if model_kind not in DEFAULT_GRIDS:
        raise DataError("unknown model kind %r" % model_kind)

    best = None
    rows = []
    for params in _canonical_candidates(grid):
        if model_kind == "autoencoder":
            score, detail = _score_autoencoder(params, train_x, val_x,
                                               val_y, seed)
        else:
            score, detail = _score_classical(model_kind, params, train_x,
                                             val_x, val_y, seed)
        rows.append({**params, **detail})
        if best is None or score > best[0]:
            best = (score, params)
    if best is None:
        raise DataError("empty grid")
    return GridSearchResult(model_kind, best[1], best[0], rows)
