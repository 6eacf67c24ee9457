import json
import math

import numpy as np
import pytest

from oracles import brute_force_lof, reference_dbscan, same_partition
from telanom.detectors import (Dbscan, IsolationForest, LocalOutlierFactor,
                               expected_path_length, harmonic, load_model,
                               save_model, scores_from_mean_depths)
from telanom.errors import DataError


# -- shared helpers ----------------------------------------------------------


def _blobs(rng, n, d=11, centers=3, spread=0.5, box=10.0):
    mus = rng.uniform(-box, box, size=(centers, d))
    assign = rng.integers(0, centers, size=n)
    return mus[assign] + rng.normal(scale=spread, size=(n, d))


# -- isolation forest --------------------------------------------------------


def test_harmonic_numbers():
    assert harmonic(0) == 0.0
    assert harmonic(1) == 1.0
    assert harmonic(10) == pytest.approx(sum(1.0 / k for k in range(1, 11)),
                                         rel=1e-15)
    big = 2_000_000
    assert harmonic(big) == pytest.approx(math.log(big) + 0.5772156649,
                                          rel=1e-9)


def test_expected_path_length():
    assert expected_path_length(0) == 0.0
    assert expected_path_length(1) == 0.0
    assert expected_path_length(2) == pytest.approx(2.0 * 1.0 - 1.0)
    # c(n) grows like 2 ln n
    assert expected_path_length(256) == pytest.approx(
        2.0 * harmonic(255) - 2.0 * 255.0 / 256.0, rel=1e-15)


def test_scores_from_mean_depths_range():
    s = scores_from_mean_depths(np.array([0.0, 5.0, 50.0]), 256)
    assert s[0] == 1.0                       # zero depth: maximally anomalous
    assert np.all(s > 0.0) and np.all(s <= 1.0)
    assert s[1] > s[2]                       # deeper is less anomalous


def test_iforest_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(0)
    x = _blobs(rng, 400)
    a = IsolationForest(n_estimators=25, seed=5).fit(x).scores(x)
    b = IsolationForest(n_estimators=25, seed=5).fit(x).scores(x)
    c = IsolationForest(n_estimators=25, seed=6).fit(x).scores(x)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_iforest_scores_in_unit_interval():
    rng = np.random.default_rng(1)
    x = _blobs(rng, 300)
    s = IsolationForest(n_estimators=50, seed=0).fit(x).scores(x)
    assert np.all(s > 0.0) and np.all(s <= 1.0)


def test_iforest_isolates_obvious_outlier():
    rng = np.random.default_rng(2)
    x = rng.normal(scale=0.3, size=(500, 11))
    outlier = np.full((1, 11), 9.0)
    # contamination must budget at least one training row: at 0.01 the
    # threshold sits below the top ~1% of train scores
    model = IsolationForest(n_estimators=100, contamination=0.01,
                            seed=0).fit(np.vstack([x, outlier]))
    s_in = model.scores(x)
    s_out = model.scores(outlier)
    assert s_out[0] > s_in.max()
    assert model.predict(outlier)[0] == 0


def test_iforest_contamination_sets_flag_rate():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1000, 11))
    model = IsolationForest(n_estimators=50, contamination=0.1, seed=1).fit(x)
    flagged = (model.predict(x) == 0).sum()
    # strictly-above nearest-rank threshold flags at most the contamination
    # share, and nearly exactly it for continuous scores
    assert flagged <= 100
    assert flagged >= 80


def test_iforest_height_cap():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(600, 11))
    model = IsolationForest(n_estimators=20, subsample=256, seed=0).fit(x)
    cap = math.ceil(math.log2(model.sample_size))

    def max_depth(tree, node=0, depth=0):
        if tree["feature"][node] < 0:
            return depth
        return max(max_depth(tree, tree["left"][node], depth + 1),
                   max_depth(tree, tree["right"][node], depth + 1))

    assert max(max_depth(t) for t in model.trees) <= cap


def test_iforest_duplicating_inliers_does_not_mask_outlier():
    # with full-data trees, duplicates change no node's [min, max] span, so
    # the outlier's expected isolation depth must not grow (statistical)
    rng = np.random.default_rng(5)
    inliers = rng.normal(scale=0.2, size=(300, 4))
    outlier = np.full((1, 4), 8.0)
    base = np.vstack([inliers, outlier])
    dup = np.vstack([inliers, inliers, outlier])
    m1 = IsolationForest(n_estimators=300, subsample=len(base),
                         seed=7).fit(base)
    m2 = IsolationForest(n_estimators=300, subsample=len(dup),
                         seed=7).fit(dup)
    d1 = m1.mean_depths(outlier)[0]
    d2 = m2.mean_depths(outlier)[0]
    assert d2 <= d1 + 0.25


def test_iforest_json_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    x = _blobs(rng, 200)
    model = IsolationForest(n_estimators=10, seed=3).fit(x)
    path = str(tmp_path / "if.json")
    save_model(model, path)
    back = load_model(path)
    assert isinstance(back, IsolationForest)
    assert np.array_equal(back.scores(x), model.scores(x))
    assert np.array_equal(back.predict(x), model.predict(x))


def test_iforest_validation():
    with pytest.raises(DataError):
        IsolationForest(n_estimators=0)
    with pytest.raises(DataError):
        IsolationForest(contamination=0.0)
    with pytest.raises(DataError):
        IsolationForest().fit(np.zeros((1, 3)))
    with pytest.raises(DataError):
        IsolationForest().predict(np.zeros((2, 3)))


# -- local outlier factor ----------------------------------------------------


def test_lof_matches_brute_force_oracle():
    rng = np.random.default_rng(20)
    for _ in range(20):
        n = int(rng.integers(30, 200))
        train = _blobs(rng, n, d=int(rng.integers(2, 12)))
        queries = train[rng.integers(0, n, size=10)] + rng.normal(
            scale=0.01, size=(10, train.shape[1]))
        k = int(rng.integers(1, 8))
        model = LocalOutlierFactor(k=k).fit(train)
        want_train = brute_force_lof(train, None, k)
        # fit-time LOF of the training rows
        got_q = model.scores(queries)
        want_q = brute_force_lof(train, queries, k)
        assert np.allclose(model.train_lof, want_train, rtol=1e-9, atol=0)
        assert np.allclose(got_q, want_q, rtol=1e-9, atol=0)


def test_lof_handles_duplicates_with_cap():
    x = np.zeros((10, 3))
    x[8:] = 1.0
    model = LocalOutlierFactor(k=3, lrd_cap=1e12).fit(x)
    assert np.isfinite(model.train_lof).all()
    assert np.isfinite(model.scores(np.zeros((1, 3)))).all()


def test_lof_ties_included_in_neighbourhood():
    # a point with k-th distance shared by several neighbours must use all
    grid = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0],
                     [0.0, -1.0], [3.0, 0.0], [0.0, 3.0], [5.0, 5.0],
                     [4.0, 5.0], [5.0, 4.0]])
    model = LocalOutlierFactor(k=2).fit(grid)
    want = brute_force_lof(grid, None, 2)
    assert np.allclose(model.train_lof, want, rtol=1e-12, atol=0)


def test_lof_flags_outlier():
    rng = np.random.default_rng(21)
    train = rng.normal(scale=0.3, size=(300, 5))
    model = LocalOutlierFactor(k=5, contamination=0.01).fit(train)
    far = np.full((1, 5), 7.0)
    near = train[:5]
    assert model.scores(far)[0] > model.scores(near).max()
    assert model.predict(far)[0] == 0
    assert np.all(model.predict(near) == 1)


def test_lof_json_round_trip(tmp_path):
    rng = np.random.default_rng(22)
    x = _blobs(rng, 150, d=5)
    model = LocalOutlierFactor(k=4).fit(x)
    path = str(tmp_path / "lof.json")
    save_model(model, path)
    back = load_model(path)
    q = _blobs(np.random.default_rng(23), 20, d=5)
    assert np.array_equal(back.scores(q), model.scores(q))
    assert back.threshold == model.threshold


def test_lof_validation():
    with pytest.raises(DataError):
        LocalOutlierFactor(k=0)
    with pytest.raises(DataError):
        LocalOutlierFactor(contamination=1.5)
    with pytest.raises(DataError):
        LocalOutlierFactor(k=5).fit(np.zeros((5, 2)))   # need > k rows
    with pytest.raises(DataError):
        LocalOutlierFactor().scores(np.zeros((2, 2)))


# -- dbscan ------------------------------------------------------------------


def test_dbscan_matches_reference_partition():
    rng = np.random.default_rng(30)
    for _ in range(20):
        n = int(rng.integers(20, 150))
        x = _blobs(rng, n, d=int(rng.integers(2, 6)), spread=0.8, box=5.0)
        eps = float(rng.uniform(0.5, 2.0))
        min_pts = int(rng.integers(2, 8))
        model = Dbscan(eps=eps, min_pts=min_pts).fit(x)
        want = reference_dbscan(x, eps, min_pts)
        assert same_partition(model.labels_, want)


def test_dbscan_permutation_invariant_partition():
    rng = np.random.default_rng(31)
    x = _blobs(rng, 120, d=3, spread=0.6, box=4.0)
    model = Dbscan(eps=1.0, min_pts=4).fit(x)
    perm = rng.permutation(len(x))
    model_p = Dbscan(eps=1.0, min_pts=4).fit(x[perm])
    assert same_partition(model.labels_[perm], model_p.labels_)


def test_dbscan_min_pts_counts_self():
    # two points eps apart: with min_pts=2 both are cores of one cluster
    x = np.array([[0.0, 0.0], [0.4, 0.0], [9.0, 9.0]])
    model = Dbscan(eps=0.5, min_pts=2).fit(x)
    assert model.labels_[0] == model.labels_[1] != Dbscan.NOISE
    assert model.labels_[2] == Dbscan.NOISE
    # min_pts=1 makes even the singleton a core of its own cluster
    model1 = Dbscan(eps=0.5, min_pts=1).fit(x)
    assert model1.labels_[2] != Dbscan.NOISE
    assert model1.n_clusters == 2


def test_dbscan_border_goes_to_nearest_core():
    # chain clusters: the bridge point sees one core on each side but only
    # 3 neighbours total, so it stays non-core and must join the nearer core
    left = np.array([[0.0, 0.0], [-1.0, 0.0], [-2.0, 0.0], [-0.5, 0.3]])
    right = np.array([[2.0, 0.0], [3.0, 0.0], [4.0, 0.0], [2.5, 0.3]])
    border = np.array([[0.9, 0.0]])           # 0.9 from left, 1.1 from right
    x = np.vstack([left, right, border])
    model = Dbscan(eps=1.2, min_pts=4).fit(x)
    assert model.labels_[8] != -1
    assert model.labels_[8] == model.labels_[0]
    assert model.labels_[0] != model.labels_[4]


def test_dbscan_two_blobs_and_noise():
    rng = np.random.default_rng(32)
    a = rng.normal(loc=0.0, scale=0.2, size=(40, 2))
    b = rng.normal(loc=8.0, scale=0.2, size=(40, 2))
    lone = np.array([[4.0, 4.0]])
    x = np.vstack([a, b, lone])
    model = Dbscan(eps=1.0, min_pts=5).fit(x)
    assert model.n_clusters == 2
    assert model.labels_[80] == Dbscan.NOISE
    assert len(set(model.labels_[:40])) == 1
    assert len(set(model.labels_[40:80])) == 1
    # prediction: near a blob is normal, far from both is anomalous
    assert model.predict(np.array([[0.1, 0.1]]))[0] == 1
    assert model.predict(np.array([[4.0, 4.0]]))[0] == 0
    s = model.scores(np.array([[0.0, 0.0], [4.0, 4.0]]))
    assert s[0] < s[1]


def test_dbscan_no_cores():
    x = np.array([[0.0, 0.0], [5.0, 5.0]])
    model = Dbscan(eps=0.5, min_pts=3).fit(x)
    assert model.n_clusters == 0
    assert np.all(model.labels_ == Dbscan.NOISE)
    assert np.all(np.isinf(model.scores(x)))
    assert np.all(model.predict(x) == 0)


def test_dbscan_json_round_trip(tmp_path):
    rng = np.random.default_rng(33)
    x = _blobs(rng, 100, d=4, spread=0.5, box=3.0)
    model = Dbscan(eps=1.0, min_pts=4).fit(x)
    path = str(tmp_path / "db.json")
    save_model(model, path)
    back = load_model(path)
    q = _blobs(np.random.default_rng(34), 30, d=4, spread=1.5, box=6.0)
    assert np.array_equal(back.scores(q), model.scores(q))
    assert np.array_equal(back.predict(q), model.predict(q))


def test_dbscan_validation():
    with pytest.raises(DataError):
        Dbscan(eps=0.0)
    with pytest.raises(DataError):
        Dbscan(min_pts=0)
    with pytest.raises(DataError):
        Dbscan().scores(np.zeros((2, 2)))


def test_load_model_unknown_kind(tmp_path):
    path = tmp_path / "weird.json"
    path.write_text(json.dumps({"kind": "mystery"}) + "\n")
    with pytest.raises(DataError):
        load_model(str(path))
