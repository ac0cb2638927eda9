import numpy as np
import pytest
from scipy.stats import spearmanr

from octxai.ebm import (EbmParams, bin_index, detect_interactions, ebm_explain, ebm_global, fit_ebm,
                        fit_pair_terms, quantile_cuts, sorted_terms)
from octxai.ensembles import BoostingParams, fit_gradient_boosting

FAST = EbmParams(outer_rounds=150, learning_rate=0.05)


def additive_data(rng, n=2000, d=4, weights=(3.0, -2.0, 1.0, 0.0)):
    X = rng.normal(size=(n, d))
    z = X @ np.array(weights[:d])
    y = (rng.random(n) < 1 / (1 + np.exp(-z))).astype(int)
    return X, y


def xor_data(reps=3):
    # balanced lattice: every main-effect bin holds as many positives as negatives
    v = np.linspace(-1, 1, 20)
    a, b = np.meshgrid(v, v, indexing="ij")
    X = np.tile(np.column_stack([a.ravel(), b.ravel()]), (reps, 1))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    return X, y


def test_quantile_cuts_and_bins():
    x = np.array([3.0, 1.0, 2.0, 2.0])
    cuts = quantile_cuts(x, 256)
    assert np.allclose(cuts, [1.5, 2.5])
    assert list(bin_index(cuts, [1.0, 1.5, 2.0, 9.0])) == [0, 1, 1, 2]
    assert len(quantile_cuts(np.arange(1000.0), 8)) == 7
    assert len(quantile_cuts(np.ones(5), 8)) == 0


def test_constant_feature_has_zero_term(rng):
    X, y = additive_data(rng, n=300, d=2)
    X = np.column_stack([X, np.full(300, 4.0)])
    m = fit_ebm(X, y, FAST)
    assert np.all(m.main_terms[2] == 0.0)
    assert ebm_global(m).importance[2] == 0.0


def test_single_feature_matches_depth_two_boosting(rng):
    # with one feature and fewer distinct values than bins the histogram tree is exact CART
    x = np.round(rng.normal(size=(400, 1)), 1)
    y = (rng.random(400) < 1 / (1 + np.exp(-2 * x[:, 0]))).astype(int)
    rounds = 200
    ebm = fit_ebm(x, y, EbmParams(outer_rounds=rounds))
    gb = fit_gradient_boosting(x, y, BoostingParams(n_estimators=rounds, learning_rate=0.01, max_depth=2))
    grid = np.linspace(-3, 3, 61).reshape(-1, 1)
    assert np.max(np.abs(ebm.raw_score(grid) - gb.raw_score(grid))) < 1e-6


def test_recovers_additive_shape_functions(rng):
    X, y = additive_data(rng, d=2, weights=(2.0, -1.5))
    m = fit_ebm(X, y)
    for j, w in enumerate((2.0, -1.5)):
        rho = spearmanr(X[:, j], m.term_contributions(X)[:, j]).statistic
        assert np.sign(rho) == np.sign(w) and abs(rho) > 0.9


def test_xor_pair_ranked_first_and_needed():
    X, y = xor_data()
    mains = fit_ebm(X, y)
    assert max(np.abs(t).max() for t in mains.main_terms) < 1e-12
    found = detect_interactions(X, y, mains, 1)
    assert found[0].pair == (0, 1) and not found[0].weak
    with_pairs = fit_ebm(X, y, pairs=True)
    acc = np.mean((with_pairs.predict_proba(X) >= 0.5) == y)
    acc_mains = np.mean((mains.predict_proba(X) >= 0.5) == y)
    assert acc > 0.95
    assert acc_mains == pytest.approx(0.5)


def test_additive_data_has_weak_pairs(rng):
    X, y = additive_data(rng, d=2, weights=(2.0, -1.5))
    m = fit_ebm(X, y)
    found = detect_interactions(X, y, m, 1)
    assert len(found) == 1 and found[0].weak
    pm = fit_pair_terms(X, y, m, [found[0].pair])
    imp = ebm_global(pm).importance
    assert imp[2] < 0.1 * imp[:2].max()


def test_pair_count_bounds(rng):
    X, y = additive_data(rng, n=200, d=3, weights=(1, 1, 1))
    m = fit_ebm(X, y, FAST)
    assert detect_interactions(X, y, m, 0) == []
    with pytest.raises(ValueError):
        detect_interactions(X, y, m, 4)


def test_pair_terms_edge_cases(rng):
    X, y = additive_data(rng, n=200, d=3, weights=(1, 1, 1))
    m = fit_ebm(X, y, FAST)
    assert fit_pair_terms(X, y, m, []) is m
    with pytest.raises(ValueError, match="duplicate"):
        fit_pair_terms(X, y, m, [(0, 1), (1, 0)])
    with pytest.raises(ValueError):
        fit_pair_terms(X, y, m, [(2, 2)])


def test_additivity_and_centering(rng):
    X, y = xor_data(reps=1)
    X = X + rng.normal(scale=0.05, size=X.shape)
    m = fit_ebm(X, y, FAST, pairs=True)
    Z = rng.uniform(-1, 1, size=(50, 2))
    for z in Z:
        att = ebm_explain(m, z)
        assert abs(att.base_value + att.contributions.sum() - att.output) < 1e-12
        assert abs(att.output - m.raw_score(z[None, :])[0]) < 1e-12
    for T, C in zip(m.main_terms, m.main_counts):
        assert abs(C @ T) / C.sum() < 1e-9
    for T, C in zip(m.pair_terms, m.pair_counts):
        assert abs(np.sum(C * T)) / C.sum() < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_feature_order_barely_matters(seed):
    r = np.random.default_rng(seed)
    X, y = additive_data(r, n=600, d=2, weights=(1.5, -1.0))
    a = fit_ebm(X, y)
    b = fit_ebm(X, y, EbmParams(feature_order=(1, 0)))
    Z = np.vstack([X, r.normal(size=(200, 2))])
    assert np.max(np.abs(a.predict_proba(Z) - b.predict_proba(Z))) < 1e-2
    with pytest.raises(ValueError):
        fit_ebm(X, y, EbmParams(feature_order=(0, 0)))


def test_training_loss_never_increases(rng):
    X, y = xor_data(reps=1)
    X = X + rng.normal(scale=0.05, size=X.shape)
    m = fit_ebm(X, y, FAST, pairs=True)
    loss = np.array(m.train_loss)
    assert np.all(np.diff(loss) <= 1e-12)


def test_global_importance_ranking(rng):
    X, y = additive_data(rng, n=800, weights=(0.2, 4.0, 0.2, 0.0))
    m = fit_ebm(X, y, FAST)
    g = ebm_global(m)
    assert g.ranking[0] == 1
    perm = [2, 0, 3, 1]
    # keep the original cycling order so the permuted fit is the same fit
    order = tuple(perm.index(j) for j in range(4))
    mp = fit_ebm(X[:, perm], y, EbmParams(outer_rounds=150, learning_rate=0.05, feature_order=order))
    assert np.allclose(ebm_global(mp).importance, g.importance[perm], rtol=1e-9, atol=1e-12)


def test_sorted_terms_order(rng):
    X, y = additive_data(rng, n=300)
    m = fit_ebm(X, y, FAST)
    items = sorted_terms(ebm_explain(m, X[0]))
    mags = [abs(v) for _, v in items]
    assert mags == sorted(mags, reverse=True)


def test_too_few_bins_rejected():
    with pytest.raises(ValueError):
        EbmParams(max_bins=1)
