import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from octxai.trees import LEAF, Tree, TreeParams, fit_tree, predict_tree


def _root_split_oracle(X, y):
    """Exhaustive SSE-reduction search; ties keep the first (feature, threshold) seen."""
    n, d = X.shape
    parent = np.sum((y - y.mean()) ** 2)
    best = (0.0, None, None)
    for j in range(d):
        u = np.unique(X[:, j])
        for a, b in zip(u[:-1], u[1:]):
            t = 0.5 * (a + b)
            left = X[:, j] < t
            yl, yr = y[left], y[~left]
            gain = parent - np.sum((yl - yl.mean()) ** 2) - np.sum((yr - yr.mean()) ** 2)
            if gain > best[0] + 1e-12:
                best = (gain, j, t)
    return best


def test_constant_targets_give_single_leaf():
    t = fit_tree(np.arange(10.0).reshape(-1, 1), np.full(10, 3.0))
    assert t.n_nodes == 1
    assert t.value[0] == 3.0 and t.cover[0] == 10


def test_perfect_stump():
    t = fit_tree(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]), TreeParams(max_depth=1))
    assert 0.0 < t.threshold[0] < 1.0
    assert t.value[t.left[0]] == 0.0 and t.value[t.right[0]] == 1.0
    assert predict_tree(t, [0.0]) == 0.0
    # x equal to the threshold goes right
    assert predict_tree(t, [t.threshold[0]]) == 1.0


def test_newton_leaf_weights():
    t = fit_tree(np.array([[0.0], [1.0]]), params=TreeParams(max_depth=1, objective="newton", reg_lambda=1.0),
                 gradients=np.array([-0.5, 0.5]), hessians=np.array([0.25, 0.25]))
    assert t.value[t.left[0]] == pytest.approx(0.4, abs=1e-15)
    assert t.value[t.right[0]] == pytest.approx(-0.4, abs=1e-15)


def test_single_leaf_predicts_constant():
    t = Tree([LEAF], [0.0], [LEAF], [LEAF], [3.0], [1.0], 2)
    assert predict_tree(t, [100.0, -5.0]) == 3.0


def test_predict_rejects_non_finite():
    t = fit_tree(np.array([[0.0], [1.0]]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        predict_tree(t, [np.nan])


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        fit_tree(np.empty((0, 2)), np.empty(0))


def test_root_split_matches_exhaustive_search(rng):
    for _ in range(30):
        X = np.round(rng.normal(size=(25, 4)), 1)
        y = (X[:, 1] + 0.5 * rng.normal(size=25) > 0).astype(float)
        gain, j, thr = _root_split_oracle(X, y)
        t = fit_tree(X, y, TreeParams(max_depth=1))
        if j is None:
            continue
        assert (t.feature[0], t.threshold[0]) == (j, pytest.approx(thr))


def test_tie_prefers_lowest_feature_then_threshold():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    t = fit_tree(X, y, TreeParams(max_depth=1))
    assert t.feature[0] == 0
    gain_thresholds = [0.5, 2.5]
    assert t.threshold[0] == min(gain_thresholds)


def _check_cover(t: Tree):
    for node in range(t.n_nodes):
        if not t.is_leaf(node):
            assert t.cover[node] == t.cover[t.left[node]] + t.cover[t.right[node]]


@given(st.integers(0, 10_000), st.integers(2, 40), st.integers(1, 5))
def test_memorizes_distinct_points_and_conserves_cover(seed, n, d):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, d))
    y = r.normal(size=n)
    t = fit_tree(X, y)
    assert np.array_equal(t.predict(X), y)
    _check_cover(t)
    assert t.cover[0] == n


@given(st.integers(0, 10_000))
def test_monotone_transform_keeps_partitions(seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(30, 3))
    y = (X[:, 0] * X[:, 2] > 0).astype(float)
    p = TreeParams(max_depth=3)
    a = fit_tree(X, y, p)
    Xt = X.copy()
    Xt[:, 1] = np.exp(2 * Xt[:, 1])
    b = fit_tree(Xt, y, p)
    assert np.array_equal(a.feature, b.feature)
    assert np.array_equal(a.apply(X), b.apply(Xt))


def test_large_lambda_shrinks_leaves(rng):
    X = rng.normal(size=(50, 2))
    g = rng.normal(size=50)
    t = fit_tree(X, params=TreeParams(max_depth=3, objective="newton", reg_lambda=1e12),
                 gradients=g, hessians=np.full(50, 0.25))
    assert np.max(np.abs(t.value)) < 1e-9


def test_min_samples_leaf_enforced(rng):
    X = rng.normal(size=(40, 3))
    y = rng.normal(size=40)
    t = fit_tree(X, y, TreeParams(min_samples_leaf=5))
    leaves = t.left == LEAF
    assert t.cover[leaves].min() >= 5


def test_max_features_subsamples_per_node(rng):
    X = rng.normal(size=(60, 9))
    y = (X[:, 4] > 0).astype(float)
    seen = set()
    for seed in range(10):
        t = fit_tree(X, y, TreeParams(max_depth=1, max_features="sqrt", seed=seed))
        seen.add(int(t.feature[0]))
    assert len(seen) > 1


def test_tree_dict_round_trip(rng):
    X = rng.normal(size=(20, 2))
    t = fit_tree(X, rng.normal(size=20))
    back = Tree.from_dict(t.to_dict())
    assert np.array_equal(back.predict(X), t.predict(X))
