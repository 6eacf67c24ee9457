"""From-scratch unsupervised detectors: isolation forest, local outlier
factor and density clustering.

All three share the conventions of the rest of the package: rows are float
matrices of shape (n, d), anomaly scores are "higher means more anomalous",
predicted labels are 0 for anomaly and 1 for normal, and models round-trip
through JSON. Neighbour searches are exact; nothing here approximates.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import DataError
from .thresholding import nearest_rank_percentile

EULER_GAMMA = 0.5772156649
_HARMONIC_EXACT_LIMIT = 10 ** 6

# growing table of exact harmonic numbers; _harmonic_table[n] = H(n)
_harmonic_table = [0.0]


def harmonic(n):
    """H(n); exact partial sum for n <= 1e6, ln(n) + gamma beyond."""
    if n <= 0:
        return 0.0
    if n > _HARMONIC_EXACT_LIMIT:
        return math.log(n) + EULER_GAMMA
    while len(_harmonic_table) <= n:
        k = len(_harmonic_table)
        _harmonic_table.append(_harmonic_table[-1] + 1.0 / k)
    return _harmonic_table[n]


def expected_path_length(n):
    """Average unsuccessful-search path length c(n) of a binary search tree
    over n points; the isolation-forest normaliser."""
    if n < 2:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


def scores_from_mean_depths(mean_depths, sample_size):
    """Anomaly scores 2^(-E[h]/c(sample_size)); always in (0, 1]."""
    c = expected_path_length(sample_size)
    if c <= 0.0:
        return np.ones_like(np.asarray(mean_depths, dtype=np.float64))
    return np.power(2.0, -np.asarray(mean_depths, dtype=np.float64) / c)


def _as_matrix(rows):
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("expected a 2-d row matrix, got shape %s" % (x.shape,))
    return x


def _sq_dists(a, b):
    """Squared Euclidean distances, shape (len(a), len(b))."""
    aa = (a * a).sum(axis=1)[:, None]
    bb = (b * b).sum(axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


_CHUNK_BUDGET = 2 ** 25  # distance-matrix floats held at once (256 MB)


def _chunks(n, n_cols=None):
    # rows per chunk shrink as the inner dimension grows so the distance
    # buffer stays bounded
    size = 512
    if n_cols:
        size = int(max(16, min(1024, _CHUNK_BUDGET // n_cols)))
    for start in range(0, n, size):
        yield start, min(n, start + size)


# ---------------------------------------------------------------------------
# isolation forest


class IsolationForest:
    """Isolation forest with random axis-aligned splits.

    Trees are grown on subsamples of ``subsample`` points with height capped
    at ceil(log2(subsample size)); a leaf reached at depth h containing s
    training points contributes h + c(s) to the path length. The decision
    threshold is the (1 - contamination) nearest-rank quantile of the
    training scores and a row is anomalous when its score is strictly above
    the threshold.
    """

    kind = "iforest"

    def __init__(self, n_estimators=100, contamination=0.001, subsample=256,
                 seed=0):
        if n_estimators < 1:
            raise DataError("n_estimators must be >= 1")
        if not 0.0 < contamination < 1.0:
            raise DataError("contamination must be in (0, 1)")
        self.n_estimators = int(n_estimators)
        self.contamination = float(contamination)
        self.subsample = int(subsample)
        self.seed = int(seed)
        self.trees = None
        self.sample_size = None
        self.threshold = None

    @property
    def n_parameters(self):
        # scalar configuration constants: estimators, contamination,
        # subsample, seed, fitted threshold
        return 5

    def _build_tree(self, x, rng, height_limit):
        # nodes as parallel lists; feature -1 marks a leaf
        feature, threshold, left, right, size = [], [], [], [], []

        def grow(idx, depth):
            node = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            size.append(len(idx))
            if depth >= height_limit or len(idx) <= 1:
                return node
            sub = x[idx]
            lo = sub.min(axis=0)
            hi = sub.max(axis=0)
            usable = np.flatnonzero(hi > lo)
            if len(usable) == 0:
                return node
            f = int(usable[rng.integers(len(usable))])
            v = float(rng.uniform(lo[f], hi[f]))
            go_left = sub[:, f] < v
            feature[node] = f
            threshold[node] = v
            left[node] = grow(idx[go_left], depth + 1)
            right[node] = grow(idx[~go_left], depth + 1)
            return node

        grow(np.arange(len(x)), 0)
        return {"feature": feature, "threshold": threshold,
                "left": left, "right": right, "size": size}

    def fit(self, rows):
        x = _as_matrix(rows)
        n = len(x)
        if n < 2:
            raise DataError("need at least 2 rows to fit")
        rng = np.random.default_rng(self.seed)
        self.sample_size = min(self.subsample, n)
        height_limit = math.ceil(math.log2(self.sample_size))
        self.trees = []
        for _ in range(self.n_estimators):
            idx = rng.choice(n, size=self.sample_size, replace=False)
            self.trees.append(self._build_tree(x[idx], rng, height_limit))
        train_scores = self.scores(x)
        self.threshold = nearest_rank_percentile(
            train_scores, (1.0 - self.contamination) * 100.0)
        return self

    def _tree_depths(self, tree, x):
        depths = np.empty(len(x))
        feature = tree["feature"]
        threshold = tree["threshold"]
        left = tree["left"]
        right = tree["right"]
        size = tree["size"]
        stack = [(0, np.arange(len(x)), 0)]
        while stack:
            node, idx, depth = stack.pop()
            if len(idx) == 0:
                continue
            f = feature[node]
            if f < 0:
                depths[idx] = depth + expected_path_length(size[node])
                continue
            go_left = x[idx, f] < threshold[node]
            stack.append((left[node], idx[go_left], depth + 1))
            stack.append((right[node], idx[~go_left], depth + 1))
        return depths

    def mean_depths(self, rows):
        if self.trees is None:
            raise DataError("model is not fitted")
        x = _as_matrix(rows)
        total = np.zeros(len(x))
        for tree in self.trees:
            total += self._tree_depths(tree, x)
        return total / len(self.trees)

    def scores(self, rows):
        return scores_from_mean_depths(self.mean_depths(rows), self.sample_size)

    def predict(self, rows):
        if self.threshold is None:
            raise DataError("model is not fitted")
        return np.where(self.scores(rows) > self.threshold, 0, 1)

    def to_json(self):
        return {
            "kind": self.kind,
            "n_estimators": self.n_estimators,
            "contamination": self.contamination,
            "subsample": self.subsample,
            "seed": self.seed,
            "sample_size": self.sample_size,
            "threshold": self.threshold,
            "trees": self.trees,
        }

    @classmethod
    def from_json(cls, obj):
        model = cls(obj["n_estimators"], obj["contamination"],
                    obj["subsample"], obj["seed"])
        model.sample_size = obj["sample_size"]
        model.threshold = obj["threshold"]
        model.trees = obj["trees"]
        return model


# ---------------------------------------------------------------------------
# local outlier factor


class LocalOutlierFactor:
    """Local outlier factor in novelty mode.

    Fitting computes k-distances, tie-inclusive k-neighbourhoods, local
    reachability densities and LOF values of the training rows straight from
    the definitions. New rows are scored against the training set. Local
    reachability density is capped at ``lrd_cap`` so exact duplicates cannot
    divide by zero. The decision threshold is the (1 - contamination)
    nearest-rank quantile of the training LOF values.
    """

    kind = "lof"

    def __init__(self, k=5, contamination=0.01, lrd_cap=1e12):
        if k < 1:
            raise DataError("k must be >= 1")
        if not 0.0 < contamination < 1.0:
            raise DataError("contamination must be in (0, 1)")
        self.k = int(k)
        self.contamination = float(contamination)
        self.lrd_cap = float(lrd_cap)
        self.x = None
        self.kdist = None
        self.lrd = None
        self.train_lof = None
        self.threshold = None

    @property
    def n_parameters(self):
        # scalar configuration constants: k, contamination, cap, threshold
        return 4

    def _lrd_from(self, dists, neigh_kdist_rows):
        """lrd of query rows given their neighbourhood distances and the
        neighbours' k-distances (both as masked flat pieces)."""
        reach = np.maximum(dists, neigh_kdist_rows)
        mean = reach.mean()
        if mean == 0.0:
            return self.lrd_cap
        return min(self.lrd_cap, 1.0 / mean)

    def fit(self, rows):
        x = _as_matrix(rows)
        n = len(x)
        if n <= self.k:
            raise DataError("need more than k=%d rows to fit" % self.k)
        self.x = x
        self.kdist = np.empty(n)
        neighbourhoods = [None] * n

        for lo, hi in _chunks(n, n):
            d = np.sqrt(_sq_dists(x[lo:hi], x))
            for r in range(hi - lo):
                d[r, lo + r] = np.inf
            kd = np.partition(d, self.k - 1, axis=1)[:, self.k - 1]
            self.kdist[lo:hi] = kd
            for r in range(hi - lo):
                neighbourhoods[lo + r] = np.flatnonzero(d[r] <= kd[r])

        self.lrd = np.empty(n)
        for i in range(n):
            nb = neighbourhoods[i]
            d_nb = np.sqrt(((x[nb] - x[i]) ** 2).sum(axis=1))
            self.lrd[i] = self._lrd_from(d_nb, self.kdist[nb])

        self.train_lof = np.empty(n)
        for i in range(n):
            nb = neighbourhoods[i]
            self.train_lof[i] = self.lrd[nb].mean() / self.lrd[i]

        self.threshold = nearest_rank_percentile(
            self.train_lof, (1.0 - self.contamination) * 100.0)
        return self

    def scores(self, rows):
        """LOF of new rows against the training set (novelty scoring)."""
        if self.x is None:
            raise DataError("model is not fitted")
        q = _as_matrix(rows)
        out = np.empty(len(q))
        for lo, hi in _chunks(len(q), len(self.x)):
            d = np.sqrt(_sq_dists(q[lo:hi], self.x))
            kd = np.partition(d, self.k - 1, axis=1)[:, self.k - 1]
            for r in range(hi - lo):
                nb = np.flatnonzero(d[r] <= kd[r])
                lrd_q = self._lrd_from(d[r, nb], self.kdist[nb])
                out[lo + r] = self.lrd[nb].mean() / lrd_q
        return out

    def predict(self, rows):
        if self.threshold is None:
            raise DataError("model is not fitted")
        return np.where(self.scores(rows) > self.threshold, 0, 1)

    def to_json(self):
        return {
            "kind": self.kind,
            "k": self.k,
            "contamination": self.contamination,
            "lrd_cap": self.lrd_cap,
            "threshold": self.threshold,
            "x": self.x.tolist(),
            "kdist": self.kdist.tolist(),
            "lrd": self.lrd.tolist(),
            "train_lof": self.train_lof.tolist(),
        }

    @classmethod
    def from_json(cls, obj):
        model = cls(obj["k"], obj["contamination"], obj["lrd_cap"])
        model.threshold = obj["threshold"]
        model.x = np.asarray(obj["x"], dtype=np.float64)
        model.kdist = np.asarray(obj["kdist"], dtype=np.float64)
        model.lrd = np.asarray(obj["lrd"], dtype=np.float64)
        model.train_lof = np.asarray(obj["train_lof"], dtype=np.float64)
        return model


# ---------------------------------------------------------------------------
# density clustering


class Dbscan:
    """Exact density clustering with Euclidean distances.

    A training row is a core point when at least ``min_pts`` rows (itself
    included) lie within ``eps``. Clusters are the connected components of
    core points under eps-adjacency; a non-core row joins the cluster of its
    nearest core point within eps (a deterministic, order-independent border
    rule), otherwise it is noise. Training noise is anomalous. A new row is
    predicted normal iff it lies within eps of any core point.
    """

    kind = "dbscan"

    NOISE = -1

    def __init__(self, eps=0.5, min_pts=10):
        if eps <= 0:
            raise DataError("eps must be positive")
        if min_pts < 1:
            raise DataError("min_pts must be >= 1")
        self.eps = float(eps)
        self.min_pts = int(min_pts)
        self.core_points = None
        self.core_labels = None
        self.labels_ = None       # training cluster ids, NOISE for noise
        self.n_clusters = None

    @property
    def n_parameters(self):
        # scalar configuration constants: eps, min_pts
        return 2

    def fit(self, rows):
        x = _as_matrix(rows)
        n = len(x)
        eps2 = self.eps * self.eps

        core_mask = np.zeros(n, dtype=bool)
        for lo, hi in _chunks(n, n):
            d2 = _sq_dists(x[lo:hi], x)
            core_mask[lo:hi] = (d2 <= eps2).sum(axis=1) >= self.min_pts

        core_idx = np.flatnonzero(core_mask)
        core_x = x[core_idx]
        comp = np.full(len(core_idx), -1)
        n_comp = 0
        unassigned = np.ones(len(core_idx), dtype=bool)
        while unassigned.any():
            seed = int(np.flatnonzero(unassigned)[0])
            frontier = np.array([seed])
            comp[seed] = n_comp
            unassigned[seed] = False
            while len(frontier):
                remaining = np.flatnonzero(unassigned)
                if len(remaining) == 0:
                    break
                reached = np.zeros(len(remaining), dtype=bool)
                for lo, hi in _chunks(len(frontier), len(remaining)):
                    d2 = _sq_dists(core_x[frontier[lo:hi]], core_x[remaining])
                    reached |= (d2 <= eps2).any(axis=0)
                frontier = remaining[reached]
                comp[frontier] = n_comp
                unassigned[frontier] = False
            n_comp += 1

        labels = np.full(n, self.NOISE)
        labels[core_idx] = comp
        non_core = np.flatnonzero(~core_mask)
        if len(core_idx) and len(non_core):
            for lo, hi in _chunks(len(non_core), len(core_x)):
                d2 = _sq_dists(x[non_core[lo:hi]], core_x)
                nearest = np.argmin(d2, axis=1)
                within = d2[np.arange(len(nearest)), nearest] <= eps2
                sel = non_core[lo:hi][within]
                labels[sel] = comp[nearest[within]]

        self.core_points = core_x
        self.core_labels = comp
        self.labels_ = labels
        self.n_clusters = n_comp if len(core_idx) else 0
        return self

    def scores(self, rows):
        """Distance to the nearest core point (inf when no cores exist);
        higher means more anomalous."""
        if self.core_points is None:
            raise DataError("model is not fitted")
        q = _as_matrix(rows)
        if len(self.core_points) == 0:
            return np.full(len(q), np.inf)
        out = np.empty(len(q))
        for lo, hi in _chunks(len(q), len(self.core_points)):
            d2 = _sq_dists(q[lo:hi], self.core_points)
            out[lo:hi] = np.sqrt(d2.min(axis=1))
        return out

    def predict(self, rows):
        return np.where(self.scores(rows) <= self.eps, 1, 0)

    def to_json(self):
        return {
            "kind": self.kind,
            "eps": self.eps,
            "min_pts": self.min_pts,
            "n_clusters": self.n_clusters,
            "core_points": ([] if self.core_points is None
                            else self.core_points.tolist()),
            "core_labels": ([] if self.core_labels is None
                            else self.core_labels.tolist()),
        }

    @classmethod
    def from_json(cls, obj):
        model = cls(obj["eps"], obj["min_pts"])
        model.core_points = np.asarray(obj["core_points"], dtype=np.float64)
        if model.core_points.size == 0:
            model.core_points = model.core_points.reshape(0, 1)
        model.core_labels = np.asarray(obj["core_labels"], dtype=np.int64)
        model.n_clusters = obj["n_clusters"]
        return model


MODEL_KINDS = {
    IsolationForest.kind: IsolationForest,
    LocalOutlierFactor.kind: LocalOutlierFactor,
    Dbscan.kind: Dbscan,
}


def save_model(model, path):
    with open(path, "w") as f:
        json.dump(model.to_json(), f)
        f.write("\n")


def load_model(path):
    with open(path) as f:
        obj = json.load(f)
    kind = obj.get("kind")
    if kind not in MODEL_KINDS:
        raise DataError("unknown model kind %r in %s" % (kind, path))
    return MODEL_KINDS[kind].from_json(obj)
