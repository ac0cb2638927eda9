"""Explainable Boosting Machine for binary classification.

The model is a logistic additive model::

    logit P(MS | x) = intercept + sum_j f_j(x_j) + sum_(i,j) f_ij(x_i, x_j)

Each ``f_j`` is a lookup table over quantile bins of feature ``j``, built
by cyclic boosting: one feature at a time, a tiny learning rate, and a
depth-2 Newton tree on the binned feature per update. Pair terms use a
coarser binning and one quadrant split (one cut per feature) per update.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numba
import numpy as np

from .ensembles import _check_binary, logit, sigmoid


@dataclass(frozen=True)
class EbmParams:
    max_bins: int = 256
    max_pair_bins: int = 32
    learning_rate: float = 0.01
    outer_rounds: int = 500
    max_depth: int = 2
    reg_lambda: float = 1.0
    min_samples_leaf: int = 1
    n_pairs: int = 10
    # pair tables keep absorbing noise with more rounds, so they stop earlier than mains
    pair_rounds: int | None = 100
    weak_gain: float = 0.01
    feature_order: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.max_bins < 2 or self.max_pair_bins < 2:
            raise ValueError("need at least 2 bins per feature")


# -- binning -----------------------------------------------------------------

def quantile_cuts(x: np.ndarray, max_bins: int) -> np.ndarray:
    """Ascending cut points; a value ``v`` lands in bin ``searchsorted(cuts, v, 'right')``.

    With at most ``max_bins`` distinct values every distinct value gets its
    own bin and cuts sit at midpoints. Otherwise cuts are the midpoints
    nearest the ``1/B .. (B-1)/B`` quantiles.
    """
    u = np.unique(np.asarray(x, dtype=float))
    if len(u) <= 1:
        return np.empty(0)
    mids = 0.5 * (u[:-1] + u[1:])
    # guard against midpoints collapsing onto the upper value
    mids = np.where(mids > u[:-1], mids, u[1:])
    if len(u) <= max_bins:
        return mids
    q = np.quantile(x, np.arange(1, max_bins) / max_bins)
    k = np.searchsorted(u, q, side="right")
    k = np.clip(k, 1, len(u) - 1)
    return np.unique(mids[k - 1])


def bin_index(cuts: np.ndarray, x) -> np.ndarray:
    return np.searchsorted(cuts, np.asarray(x, dtype=float), side="right")


# -- kernels -----------------------------------------------------------------

@numba.njit(cache=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True)
def _loss(y, score):
    total = 0.0
    for i in range(score.shape[0]):
        s = score[i]
        total += max(s, 0.0) + np.log1p(np.exp(-abs(s))) - y[i] * s
    return total / score.shape[0]


# recursive, so never cached on disk (see treeshap)
@numba.njit
def _hist_tree(G, H, C, lo, hi, depth, max_depth, lam, min_leaf, out):
    """Fill ``out[lo:hi]`` with the leaves of a Newton tree over bins ``lo..hi-1``.

    A cut at ``s`` sends bins ``< s`` left; the bin just left of the cut must
    be non-empty so equal partitions are only scored once.
    """
    g = 0.0
    h = 0.0
    c = 0.0
    for b in range(lo, hi):
        g += G[b]
        h += H[b]
        c += C[b]
    if depth < max_depth and c >= 2 and hi - lo > 1:
        best = -np.inf
        cut = -1
        gl = 0.0
        hl = 0.0
        cl = 0.0
        parent = g * g / (h + lam)
        for s in range(lo + 1, hi):
            gl += G[s - 1]
            hl += H[s - 1]
            cl += C[s - 1]
            if cl >= min_leaf and c - cl >= min_leaf and C[s - 1] > 0:
                gain = 0.5 * (gl * gl / (hl + lam) + (g - gl) ** 2 / (h - hl + lam) - parent)
                if gain > best:
                    best = gain
                    cut = s
        if cut > 0 and best > 0:
            _hist_tree(G, H, C, lo, cut, depth + 1, max_depth, lam, min_leaf, out)
            _hist_tree(G, H, C, cut, hi, depth + 1, max_depth, lam, min_leaf, out)
            return
    leaf = -g / (h + lam)
    for b in range(lo, hi):
        out[b] = leaf


@numba.njit
def _boost_mains(bins, nbins, counts, y, score, order, rounds, lr, lam, min_leaf, max_depth, tables, losses):
    n = y.shape[0]
    width = tables.shape[1]
    G = np.empty(width)
    H = np.empty(width)
    leaf = np.empty(width)
    losses[0] = _loss(y, score)
    for r in range(rounds):
        for j in order:
            nb = nbins[j]
            G[:nb] = 0.0
            H[:nb] = 0.0
            for i in range(n):
                p = _sigmoid(score[i])
                G[bins[j, i]] += p - y[i]
                H[bins[j, i]] += p * (1.0 - p)
            _hist_tree(G, H, counts[j], 0, nb, 0, max_depth, lam, min_leaf, leaf)
            for b in range(nb):
                tables[j, b] += lr * leaf[b]
            for i in range(n):
                score[i] += lr * leaf[bins[j, i]]
        losses[r + 1] = _loss(y, score)


@numba.njit(cache=True)
def _quadrant_split(G2, H2, C2, lam, min_leaf):
    """Best single cut per axis on a 2-D histogram: ``(gain, a, b)``.

    Rows ``< a`` / ``>= a`` and columns ``< b`` / ``>= b`` form the quadrants.
    """
    na, nb = G2.shape
    PG = np.zeros((na + 1, nb + 1))
    PH = np.zeros((na + 1, nb + 1))
    PC = np.zeros((na + 1, nb + 1))
    for i in range(na):
        for j in range(nb):
            PG[i + 1, j + 1] = G2[i, j] + PG[i, j + 1] + PG[i + 1, j] - PG[i, j]
            PH[i + 1, j + 1] = H2[i, j] + PH[i, j + 1] + PH[i + 1, j] - PH[i, j]
            PC[i + 1, j + 1] = C2[i, j] + PC[i, j + 1] + PC[i + 1, j] - PC[i, j]
    gt, ht, ct = PG[na, nb], PH[na, nb], PC[na, nb]
    parent = gt * gt / (ht + lam)
    best = -np.inf
    ba = -1
    bb = -1
    for a in range(1, na):
        for b in range(1, nb):
            cll = PC[a, b]
            clr = PC[a, nb] - cll
            crl = PC[na, b] - cll
            crr = ct - cll - clr - crl
            if cll < min_leaf or clr < min_leaf or crl < min_leaf or crr < min_leaf:
                continue
            gll = PG[a, b]
            glr = PG[a, nb] - gll
            grl = PG[na, b] - gll
            grr = gt - gll - glr - grl
            hll = PH[a, b]
            hlr = PH[a, nb] - hll
            hrl = PH[na, b] - hll
            hrr = ht - hll - hlr - hrl
            gain = 0.5 * (gll * gll / (hll + lam) + glr * glr / (hlr + lam)
                          + grl * grl / (hrl + lam) + grr * grr / (hrr + lam) - parent)
            if gain > best:
                best = gain
                ba = a
                bb = b
    return best, ba, bb


@numba.njit(cache=True)
def _pair_hists(bi, bj, ni, nj, g, h):
    G2 = np.zeros((ni, nj))
    H2 = np.zeros((ni, nj))
    for k in range(bi.shape[0]):
        G2[bi[k], bj[k]] += g[k]
        H2[bi[k], bj[k]] += h[k]
    return G2, H2


@numba.njit(cache=True)
def _boost_pairs(pbins, nbi, nbj, counts, y, score, rounds, lr, lam, min_leaf, tables, losses, loss_offset):
    n = y.shape[0]
    g = np.empty(n)
    h = np.empty(n)
    for r in range(rounds):
        for t in range(nbi.shape[0]):
            for i in range(n):
                p = _sigmoid(score[i])
                g[i] = p - y[i]
                h[i] = p * (1.0 - p)
            ni, nj = nbi[t], nbj[t]
            bi = pbins[t, 0]
            bj = pbins[t, 1]
            G2, H2 = _pair_hists(bi, bj, ni, nj, g, h)
            gain, a, b = _quadrant_split(G2, H2, counts[t, :ni, :nj], lam, min_leaf)
            if not gain > 0:
                continue
            step = np.empty((2, 2))
            for qa in range(2):
                for qb in range(2):
                    ra0, ra1 = (0, a) if qa == 0 else (a, ni)
                    cb0, cb1 = (0, b) if qb == 0 else (b, nj)
                    gs = 0.0
                    hs = 0.0
                    for x in range(ra0, ra1):
                        for z in range(cb0, cb1):
                            gs += G2[x, z]
                            hs += H2[x, z]
                    step[qa, qb] = lr * (-gs / (hs + lam))
            for x in range(ni):
                for z in range(nj):
                    tables[t, x, z] += step[0 if x < a else 1, 0 if z < b else 1]
            for i in range(n):
                score[i] += step[0 if bi[i] < a else 1, 0 if bj[i] < b else 1]
        losses[loss_offset + r] = _loss(y, score)


def _pair_counts(bi, bj, ni, nj):
    return np.bincount(bi * nj + bj, minlength=ni * nj).reshape(ni, nj).astype(float)


# -- model -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EbmModel:
    intercept: float
    cuts: tuple[np.ndarray, ...]
    main_terms: tuple[np.ndarray, ...]
    main_counts: tuple[np.ndarray, ...]
    params: EbmParams
    feature_names: tuple[str, ...]
    pairs: tuple[tuple[int, int], ...] = ()
    pair_cuts: tuple[np.ndarray, ...] = ()
    pair_terms: tuple[np.ndarray, ...] = ()
    pair_counts: tuple[np.ndarray, ...] = ()
    train_loss: tuple[float, ...] = field(default=(), repr=False)

    kind = "ebm"

    @property
    def n_features(self) -> int:
        return len(self.cuts)

    @property
    def term_names(self) -> list[str]:
        names = list(self.feature_names)
        names += [f"{self.feature_names[i]} x {self.feature_names[j]}" for i, j in self.pairs]
        return names

    def _bins(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        return X, [bin_index(c, X[:, j]) for j, c in enumerate(self.cuts)]

    def term_contributions(self, X) -> np.ndarray:
        """(n, n_terms) matrix of table lookups, mains first then pairs."""
        X, bins = self._bins(X)
        cols = [self.main_terms[j][bins[j]] for j in range(self.n_features)]
        for (i, j), (ci, cj), T in zip(self.pairs, self.pair_cuts, self.pair_terms):
            cols.append(T[bin_index(ci, X[:, i]), bin_index(cj, X[:, j])])
        return np.column_stack(cols) if cols else np.empty((X.shape[0], 0))

    def raw_score(self, X) -> np.ndarray:
        contrib = self.term_contributions(X)
        return _sum_terms(self.intercept, contrib)

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.raw_score(X))


def _sum_terms(intercept: float, contrib: np.ndarray) -> np.ndarray:
    s = np.full(contrib.shape[0], float(intercept))
    for t in range(contrib.shape[1]):
        s = s + contrib[:, t]
    return s


def _default_names(d: int) -> tuple[str, ...]:
    return tuple(f"x{j}" for j in range(d))


def _binned(X, max_bins):
    cuts = [quantile_cuts(X[:, j], max_bins) for j in range(X.shape[1])]
    bins = np.array([bin_index(c, X[:, j]) for j, c in enumerate(cuts)], dtype=np.int64).reshape(len(cuts), -1)
    nbins = np.array([len(c) + 1 for c in cuts], dtype=np.int64)
    return cuts, bins, nbins


def fit_ebm(X, y, params: EbmParams | None = None, feature_names=None, pairs: bool = False) -> EbmModel:
    """Fit the main-effects model; with ``pairs=True`` continue to EBM+i."""
    p = params or EbmParams()
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    n, d = X.shape
    names = tuple(feature_names) if feature_names is not None else _default_names(d)
    order = p.feature_order if p.feature_order is not None else tuple(range(d))
    if sorted(order) != list(range(d)):
        raise ValueError("feature_order must be a permutation of the features")
    cuts, bins, nbins = _binned(X, p.max_bins)
    width = int(nbins.max())
    counts = np.zeros((d, width))
    for j in range(d):
        counts[j, : nbins[j]] = np.bincount(bins[j], minlength=nbins[j])
    tables = np.zeros((d, width))
    intercept = logit(float(np.mean(y)))
    score = np.full(n, intercept)
    losses = np.empty(p.outer_rounds + 1)
    _boost_mains(bins, nbins, counts, y, score, np.array(order, dtype=np.int64), p.outer_rounds,
                 p.learning_rate, p.reg_lambda, p.min_samples_leaf, p.max_depth, tables, losses)
    mains, main_counts = [], []
    for j in range(d):
        T, C = tables[j, : nbins[j]].copy(), counts[j, : nbins[j]].copy()
        shift = float(C @ T) / n
        mains.append(T - shift)
        main_counts.append(C)
        intercept += shift
    model = EbmModel(intercept, tuple(cuts), tuple(mains), tuple(main_counts), p, names,
                     train_loss=tuple(losses.tolist()))
    if pairs and p.n_pairs > 0 and d > 1:
        found = detect_interactions(X, y, model, min(p.n_pairs, d * (d - 1) // 2))
        model = fit_pair_terms(X, y, model, [pr.pair for pr in found])
    return model


@dataclass(frozen=True)
class PairScore:
    pair: tuple[int, int]
    gain: float
    weak: bool


def detect_interactions(X, y, model: EbmModel, k: int) -> list[PairScore]:
    """Rank feature pairs by the gain of one quadrant split on the residuals.

    Residual gradients come from the frozen main-effects model. ``weak``
    marks pairs whose gain per training row is below ``params.weak_gain``.
    """
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    n, d = X.shape
    if k < 0 or k > d * (d - 1) // 2:
        raise ValueError(f"cannot select {k} pairs from {d} features")
    if k == 0:
        return []
    p = model.params
    prob = model.predict_proba(X)
    g, h = prob - y, prob * (1 - prob)
    _, bins, nb = _binned(X, p.max_pair_bins)
    scored = []
    for i, j in combinations(range(d), 2):
        G2, H2 = _pair_hists(bins[i], bins[j], nb[i], nb[j], g, h)
        C2 = _pair_counts(bins[i], bins[j], nb[i], nb[j])
        gain, _, _ = _quadrant_split(G2, H2, C2, p.reg_lambda, p.min_samples_leaf)
        scored.append(((i, j), gain if np.isfinite(gain) else 0.0))
    # stable sort keeps lexicographic order among equal gains
    scored.sort(key=lambda t: -t[1])
    return [PairScore(pr, gain, gain / n < p.weak_gain) for pr, gain in scored[:k]]


def fit_pair_terms(X, y, model: EbmModel, pairs) -> EbmModel:
    """Boost pair tables cyclically on top of the frozen main effects."""
    pairs = [tuple(sorted(map(int, pr))) for pr in pairs]
    if len(set(pairs)) != len(pairs):
        raise ValueError("duplicate pairs")
    if any(i == j for i, j in pairs):
        raise ValueError("a pair needs two distinct features")
    if not pairs:
        return model
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    n = X.shape[0]
    p = model.params
    rounds = p.pair_rounds if p.pair_rounds is not None else p.outer_rounds
    cuts, bins, nb = _binned(X, p.max_pair_bins)
    m = len(pairs)
    nbi = np.array([nb[i] for i, _ in pairs], dtype=np.int64)
    nbj = np.array([nb[j] for _, j in pairs], dtype=np.int64)
    width = int(nb.max())
    pbins = np.stack([np.stack([bins[i], bins[j]]) for i, j in pairs])
    counts = np.zeros((m, width, width))
    for t, (i, j) in enumerate(pairs):
        counts[t, : nb[i], : nb[j]] = _pair_counts(bins[i], bins[j], nb[i], nb[j])
    tables = np.zeros((m, width, width))
    score = model.raw_score(X).copy()
    losses = np.empty(rounds)
    _boost_pairs(pbins, nbi, nbj, counts, y, score, rounds, p.learning_rate, p.reg_lambda,
                 p.min_samples_leaf, tables, losses, 0)
    intercept = model.intercept
    terms, term_counts = [], []
    for t in range(m):
        T, C = tables[t, : nbi[t], : nbj[t]].copy(), counts[t, : nbi[t], : nbj[t]].copy()
        shift = float(np.sum(C * T)) / n
        terms.append(T - shift)
        term_counts.append(C)
        intercept += shift
    return replace(
        model,
        intercept=intercept,
        pairs=tuple(pairs),
        pair_cuts=tuple((cuts[i], cuts[j]) for i, j in pairs),
        pair_terms=tuple(terms),
        pair_counts=tuple(term_counts),
        train_loss=tuple(model.train_loss) + tuple(losses.tolist()),
    )


@dataclass(frozen=True)
class TermAttribution:
    base_value: float
    names: tuple[str, ...]
    contributions: np.ndarray
    output: float


def ebm_explain(model: EbmModel, x) -> TermAttribution:
    """Exact per-term decomposition of one prediction (log-odds space)."""
    contrib = model.term_contributions(np.asarray(x, dtype=float).reshape(1, -1))
    out = float(_sum_terms(model.intercept, contrib)[0])
    return TermAttribution(float(model.intercept), tuple(model.term_names), contrib[0], out)


def sorted_terms(att: TermAttribution) -> list[tuple[str, float]]:
    order = sorted(range(len(att.names)), key=lambda t: (-abs(att.contributions[t]), t))
    return [(att.names[t], float(att.contributions[t])) for t in order]


@dataclass(frozen=True)
class EbmGlobal:
    names: tuple[str, ...]
    importance: np.ndarray
    ranking: tuple[int, ...]
    curves: dict
    heat_maps: dict


def ebm_global(model: EbmModel) -> EbmGlobal:
    """Mean absolute term score over the training bins, plus curves and pair maps."""
    imps, curves, maps = [], {}, {}
    for j, (T, C, cuts) in enumerate(zip(model.main_terms, model.main_counts, model.cuts)):
        imps.append(float(C @ np.abs(T)) / C.sum())
        lo = np.concatenate([[-np.inf], cuts])
        hi = np.concatenate([cuts, [np.inf]])
        curves[model.feature_names[j]] = np.column_stack([lo, hi, T, C])
    for (i, j), T, C, name in zip(model.pairs, model.pair_terms, model.pair_counts,
                                  model.term_names[model.n_features:]):
        imps.append(float(np.sum(C * np.abs(T))) / C.sum())
        maps[name] = T.copy()
    imps = np.array(imps)
    ranking = tuple(sorted(range(len(imps)), key=lambda t: (-imps[t], t)))
    return EbmGlobal(tuple(model.term_names), imps, ranking, curves, maps)
