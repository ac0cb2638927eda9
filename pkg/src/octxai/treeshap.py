"""Exact Shapley attributions for tree ensembles.

The game explained is the path-dependent conditional expectation: for a
feature subset ``S``, ``v(S)`` descends every tree following ``x`` at splits
on features in ``S`` and averaging both children by cover elsewhere.

``tree_shap`` computes the Shapley values of that game in polynomial time
with the path-extension recursion; ``brute_force_shap`` enumerates all
subsets and is kept as an independent oracle for small ``d``.

Forest attributions live in probability (vote fraction) space, boosted
attributions in log-odds space.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numba
import numpy as np

from .data import GRID_NAMES, GRID_SHAPE, cell_index
from .ensembles import BoostedModel, ForestModel
from .trees import LEAF, Tree

RAW_SCORE = "RawScore"
PROBABILITY = "Probability"
BRUTE_FORCE_MAX_D = 20


@dataclass(frozen=True)
class Attribution:
    base_value: float
    phi: np.ndarray
    output: float
    target_space: str
    feature_names: tuple[str, ...] = ()


def _terms(model):
    """``(trees, scales, offset, space)`` such that output = offset + sum scale * tree(x)."""
    if isinstance(model, BoostedModel):
        lr = model.params.learning_rate
        return list(model.trees), [lr] * len(model.trees), model.base_score, RAW_SCORE
    if isinstance(model, ForestModel):
        if not model.trees:
            raise ValueError("forest has no trees")
        k = len(model.trees)
        return list(model.trees), [1.0 / k] * k, 0.0, PROBABILITY
    if isinstance(model, Tree):
        return [model], [1.0], 0.0, RAW_SCORE
    raise TypeError(f"cannot explain {type(model).__name__}")


def _check_cover(tree: Tree):
    c = tree.cover
    if len(c) != tree.n_nodes or not np.all(np.isfinite(c)) or c[0] <= 0:
        raise ValueError("tree is missing node cover")


def expected_value(tree: Tree) -> float:
    leaves = tree.left == LEAF
    return float(np.sum(tree.value[leaves] * tree.cover[leaves]) / tree.cover[0])


# -- path algorithm ----------------------------------------------------------

# Self-recursive kernels are not cached: numba's on-disk cache can load them
# in a broken state, so these compile once per process instead.
@numba.njit
def _extend(fi, zf, of, pw, depth, zero, one, feat):
    fi[depth] = feat
    zf[depth] = zero
    of[depth] = one
    pw[depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[i + 1] += one * pw[i] * (i + 1) / (depth + 1)
        pw[i] = zero * pw[i] * (depth - i) / (depth + 1)


@numba.njit
def _unwind(fi, zf, of, pw, depth, idx):
    one = of[idx]
    zero = zf[idx]
    nxt = pw[depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[i]
            pw[i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[i] * zero * (depth - i) / (depth + 1)
        else:
            pw[i] = pw[i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        fi[i] = fi[i + 1]
        zf[i] = zf[i + 1]
        of[i] = of[i + 1]


@numba.njit
def _unwound_sum(zf, of, pw, depth, idx):
    one = of[idx]
    zero = zf[idx]
    nxt = pw[depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = nxt * (depth + 1) / ((i + 1) * one)
            total += tmp
            nxt = pw[i] - tmp * zero * (depth - i) / (depth + 1)
        else:
            total += (pw[i] / zero) / ((depth - i) / (depth + 1))
    return total


@numba.njit
def _recurse(feature, threshold, left, right, value, cover, x, phi, scale, node, depth,
             pfi, pzf, pof, ppw, zero, one, feat):
    size = depth + 2
    fi = np.empty(size, np.int64)
    zf = np.empty(size)
    of = np.empty(size)
    pw = np.empty(size)
    for i in range(depth):
        fi[i] = pfi[i]
        zf[i] = pzf[i]
        of[i] = pof[i]
        pw[i] = ppw[i]
    _extend(fi, zf, of, pw, depth, zero, one, feat)
    if left[node] == -1:
        for i in range(1, depth + 1):
            w = _unwound_sum(zf, of, pw, depth, i)
            phi[fi[i]] += w * (of[i] - zf[i]) * value[node] * scale
        return
    f = feature[node]
    if x[f] < threshold[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    hot_zero = cover[hot] / cover[node]
    cold_zero = cover[cold] / cover[node]
    in_zero = 1.0
    in_one = 1.0
    k = 0
    while k <= depth:
        if fi[k] == f:
            break
        k += 1
    if k != depth + 1:
        in_zero = zf[k]
        in_one = of[k]
        _unwind(fi, zf, of, pw, depth, k)
        depth -= 1
    _recurse(feature, threshold, left, right, value, cover, x, phi, scale, hot, depth + 1,
             fi, zf, of, pw, hot_zero * in_zero, in_one, f)
    _recurse(feature, threshold, left, right, value, cover, x, phi, scale, cold, depth + 1,
             fi, zf, of, pw, cold_zero * in_zero, 0.0, f)


@numba.njit
def _shap_rows(X, feature, threshold, left, right, value, cover, roots, scales, d):
    n = X.shape[0]
    out = np.zeros((n, d))
    # slot d absorbs the dummy root feature
    phi = np.zeros(d + 1)
    empty_i = np.empty(0, np.int64)
    empty_f = np.empty(0)
    for r in range(n):
        phi[:] = 0.0
        for t in range(roots.shape[0]):
            _recurse(feature, threshold, left, right, value, cover, X[r], phi, scales[t],
                     roots[t], 0, empty_i, empty_f, empty_f, empty_f, 1.0, 1.0, d)
        out[r] = phi[:d]
    return out


def _pack(trees, scales):
    feats, thr, lefts, rights, vals, covs, roots = [], [], [], [], [], [], []
    offset = 0
    for t in trees:
        _check_cover(t)
        roots.append(offset)
        feats.append(t.feature)
        thr.append(t.threshold)
        lefts.append(np.where(t.left == LEAF, LEAF, t.left + offset))
        rights.append(np.where(t.right == LEAF, LEAF, t.right + offset))
        vals.append(t.value)
        covs.append(t.cover)
        offset += t.n_nodes
    cat = np.concatenate
    return (cat(feats).astype(np.int64), cat(thr).astype(float), cat(lefts).astype(np.int64),
            cat(rights).astype(np.int64), cat(vals).astype(float), cat(covs).astype(float),
            np.array(roots, dtype=np.int64), np.array(scales, dtype=float))


def _n_features(model, x_dim: int) -> int:
    d = getattr(model, "n_features", None)
    if d is not None and d and x_dim != d:
        raise ValueError(f"expected {d} features, got {x_dim}")
    return x_dim


def shap_values(model, X) -> tuple[np.ndarray, float, np.ndarray]:
    """Attributions for every row of ``X``: ``(phi, base_value, outputs)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    d = _n_features(model, X.shape[1])
    trees, scales, offset, _ = _terms(model)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    phi = _shap_rows(np.ascontiguousarray(X), *_pack(trees, scales), d)
    base = offset + sum(s * expected_value(t) for t, s in zip(trees, scales))
    outputs = np.full(X.shape[0], float(offset))
    for t, s in zip(trees, scales):
        outputs = outputs + s * t.predict(X)
    return phi, float(base), outputs


def tree_shap(model, x, feature_names=()) -> Attribution:
    x = np.asarray(x, dtype=float).reshape(-1)
    phi, base, out = shap_values(model, x[None, :])
    return Attribution(base, phi[0], float(out[0]), _terms(model)[3], tuple(feature_names))


# -- oracle ------------------------------------------------------------------

def _leaf_paths(tree: Tree):
    """For each leaf: value and the list of ``(feature, parent, child, went_left)`` edges."""
    out, stack = [], [(0, [])]
    while stack:
        node, path = stack.pop()
        if tree.left[node] == LEAF:
            out.append((tree.value[node], path))
            continue
        f = tree.feature[node]
        stack.append((tree.left[node], path + [(f, node, tree.left[node], True)]))
        stack.append((tree.right[node], path + [(f, node, tree.right[node], False)]))
    return out


def subset_values(model, x) -> np.ndarray:
    """``v(S)`` for all ``2**d`` subsets; bit ``i`` of the index marks feature ``i``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    d = len(x)
    trees, scales, offset, _ = _terms(model)
    masks = np.arange(2**d)
    member = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    v = np.full(2**d, float(offset))
    for tree, s in zip(trees, scales):
        _check_cover(tree)
        for val, path in _leaf_paths(tree):
            w = np.ones(2**d)
            for f, parent, child, went_left in path:
                follows = (x[f] < tree.threshold[parent]) == went_left
                w = w * np.where(member[:, f], float(follows), tree.cover[child] / tree.cover[parent])
            v = v + s * val * w
    return v


def brute_force_shap(model, x, feature_names=()) -> Attribution:
    x = np.asarray(x, dtype=float).reshape(-1)
    d = _n_features(model, len(x))
    if d > BRUTE_FORCE_MAX_D:
        raise ValueError(f"brute force limited to {BRUTE_FORCE_MAX_D} features, got {d}")
    v = subset_values(model, x)
    masks = np.arange(2**d)
    size = np.array([bin(m).count("1") for m in masks])
    weight = np.array([factorial(k) * factorial(d - k - 1) / factorial(d) if k < d else 0.0 for k in range(d + 1)])
    phi = np.zeros(d)
    for i in range(d):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = np.sum(weight[size[without]] * (v[without | (1 << i)] - v[without]))
    return Attribution(float(v[0]), phi, float(v[-1]), _terms(model)[3], tuple(feature_names))


# -- global views ------------------------------------------------------------

@dataclass(frozen=True)
class GlobalShapSummary:
    feature_names: tuple[str, ...]
    mean_abs_phi: np.ndarray
    phi: np.ndarray
    values: np.ndarray
    ranking: tuple[int, ...]
    base_value: float
    target_space: str


def rank_features(scores) -> tuple[int, ...]:
    scores = np.asarray(scores)
    return tuple(sorted(range(len(scores)), key=lambda j: (-scores[j], j)))


def global_summary(model, X_background, feature_names=()) -> GlobalShapSummary:
    X = np.asarray(X_background, dtype=float)
    d = model.n_features
    names = tuple(feature_names) if feature_names else tuple(f"x{j}" for j in range(d))
    if X.shape[0] == 0:
        phi, base = np.zeros((0, d)), expected_value_of(model)
        mean_abs = np.zeros(d)
    else:
        phi, base, _ = shap_values(model, X)
        mean_abs = np.mean(np.abs(phi), axis=0)
    return GlobalShapSummary(names, mean_abs, phi, X.reshape(-1, d), rank_features(mean_abs), base, _terms(model)[3])


def expected_value_of(model) -> float:
    trees, scales, offset, _ = _terms(model)
    return float(offset + sum(s * expected_value(t) for t, s in zip(trees, scales)))


def shap_grid(source, layout=GRID_NAMES) -> np.ndarray:
    """Place per-feature values on the 8x8 grid.

    A :class:`GlobalShapSummary` contributes mean |phi|; an
    :class:`Attribution` (or a plain 64-vector) contributes signed phi.
    """
    if isinstance(source, GlobalShapSummary):
        vec = source.mean_abs_phi
    elif isinstance(source, Attribution):
        vec = source.phi
    else:
        vec = np.asarray(source, dtype=float)
    if len(vec) != len(layout) or len(layout) != GRID_SHAPE[0] * GRID_SHAPE[1]:
        raise ValueError(f"grid view needs 64 features, got {len(vec)}")
    grid = np.zeros(GRID_SHAPE)
    for name, v in zip(layout, vec):
        grid[cell_index(name)] = v
    return grid


@dataclass(frozen=True)
class Waterfall:
    base_value: float
    items: list
    folded_count: int
    folded_sum: float
    output: float


def waterfall(att: Attribution, max_items: int = 10) -> Waterfall:
    """Largest contributions first; the rest folded into one remainder bar."""
    names = att.feature_names or tuple(f"x{j}" for j in range(len(att.phi)))
    order = [j for j in sorted(range(len(att.phi)), key=lambda j: (-abs(att.phi[j]), j)) if att.phi[j] != 0]
    shown, folded = order[:max_items], order[max_items:]
    items = [(names[j], float(att.phi[j])) for j in shown]
    return Waterfall(att.base_value, items, len(folded), float(sum(att.phi[j] for j in folded)), att.output)


def dependence_data(summary: GlobalShapSummary, feature) -> list[tuple[float, float]]:
    j = summary.feature_names.index(feature) if isinstance(feature, str) else int(feature)
    if not 0 <= j < len(summary.feature_names):
        raise IndexError(f"feature {feature} out of range")
    return [(float(v), float(p)) for v, p in zip(summary.values[:, j], summary.phi[:, j])]
