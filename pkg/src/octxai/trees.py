"""CART-style regression trees with exact split search.

Trees are stored as flat arrays (node 0 is the root, children referenced by
index, ``-1`` marks a leaf). Every node records its cover: the number of
training rows that reached it, counting bootstrap duplicates.

Routing rule: ``x[feature] < threshold`` goes left, everything else right.
Thresholds sit at the midpoint of adjacent distinct training values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    max_depth: int | None = None
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    # "all", "sqrt" or an int feature count
    max_features: str | int = "all"
    # "variance" or "newton"
    objective: str = "variance"
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.objective not in ("variance", "newton"):
            raise ValueError(f"unknown split objective {self.objective!r}")
        if self.objective == "newton" and self.reg_lambda < 0:
            raise ValueError("reg_lambda must be >= 0")
        if not (self.max_features in ("all", "sqrt") or (isinstance(self.max_features, int) and self.max_features >= 1)):
            raise ValueError(f"bad max_features {self.max_features!r}")

    def n_features(self, d: int) -> int:
        if self.max_features == "all":
            return d
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(d)))
        return min(int(self.max_features), d)


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    n_features: int = field(default=0)

    def __post_init__(self):
        for name, dtype in (("feature", np.int64), ("left", np.int64), ("right", np.int64),
                            ("threshold", np.float64), ("value", np.float64), ("cover", np.float64)):
            a = np.array(getattr(self, name), dtype=dtype)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] == LEAF

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left == LEAF))

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.left[node] == LEAF:
                best = max(best, d)
            else:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def with_values(self, value: np.ndarray) -> "Tree":
        return Tree(self.feature, self.threshold, self.left, self.right, value, self.cover, self.n_features)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] < self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature value")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.left[node] != LEAF
        while np.any(active):
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] < self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])
            active = self.left[node] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "n_features": self.n_features,
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"], d["cover"], d["n_features"])


def predict_tree(tree: Tree, x) -> float:
    """Prediction for a single feature vector."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature value")
    node = 0
    while tree.left[node] != LEAF:
        f = tree.feature[node]
        node = tree.left[node] if x[f] < tree.threshold[node] else tree.right[node]
    return float(tree.value[node])


# -- fitting -----------------------------------------------------------------

def _best_split(xs: np.ndarray, stats: list[np.ndarray], params: TreeParams):
    """Best split over sorted columns.

    ``xs`` is (m, k) with each column sorted ascending; ``stats`` are the
    matching target columns, reordered the same way. Returns
    ``(gain, column, position)`` where position ``i`` splits between sorted
    rows ``i`` and ``i+1``, or ``None``.
    """
    m = xs.shape[0]
    min_leaf = params.min_samples_leaf
    n_left = np.arange(1, m)[:, None]
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    if not valid.any():
        return None
    if params.objective == "variance":
        (t,) = stats
        cs = np.cumsum(t, axis=0)[:-1]
        total = t.sum(axis=0)
        a, b, c = cs**2 / n_left, (total - cs) ** 2 / (m - n_left), total**2 / m
    else:
        g, h = stats
        lam = params.reg_lambda
        G, H = g.sum(axis=0), h.sum(axis=0)
        gl, hl = np.cumsum(g, axis=0)[:-1], np.cumsum(h, axis=0)[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            a, b, c = 0.5 * gl**2 / (hl + lam), 0.5 * (G - gl) ** 2 / (H - hl + lam), 0.5 * G**2 / (H + lam)
    with np.errstate(invalid="ignore"):
        gain = np.where(valid, a + b - c, -np.inf)
        scale = np.where(valid, np.abs(a) + np.abs(b) + np.abs(c), 0.0)
    gain = np.nan_to_num(gain, nan=-np.inf)
    best = gain.max()
    if not np.isfinite(best):
        return None
    # gains equal up to summation-order rounding count as ties, so row order
    # cannot change the chosen split
    tol = 1e-11 * float(np.nan_to_num(scale, nan=0.0, posinf=0.0).max())
    near = gain >= best - tol
    # column-major first hit: lowest feature first, then lowest threshold
    flat = np.argmax(near.T)
    col, pos = divmod(int(flat), m - 1)
    return float(gain[pos, col]), col, pos


class _Builder:
    def __init__(self, X, stats, params: TreeParams, rng: np.random.Generator):
        self.X = X
        self.stats = stats
        self.params = params
        self.rng = rng
        self.d = X.shape[1]
        self.k = params.n_features(self.d)
        self.feature, self.threshold, self.left, self.right, self.value, self.cover = [], [], [], [], [], []

    def leaf_value(self, idx):
        if self.params.objective == "variance":
            return float(np.mean(self.stats[0][idx]))
        g, h = self.stats[0][idx].sum(), self.stats[1][idx].sum()
        return float(-g / (h + self.params.reg_lambda))

    def new_node(self, idx) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(self.leaf_value(idx))
        self.cover.append(float(len(idx)))
        return len(self.feature) - 1

    def candidate_features(self, idx) -> np.ndarray:
        if self.k >= self.d:
            return np.arange(self.d)
        # sample k features; keep drawing until one is non-constant in the node
        perm = self.rng.permutation(self.d)
        chosen = list(perm[: self.k])
        Xn = self.X[idx]
        if not any(np.ptp(Xn[:, f]) > 0 for f in chosen):
            for f in perm[self.k:]:
                chosen.append(f)
                if np.ptp(Xn[:, f]) > 0:
                    break
        return np.sort(np.array(chosen))

    def pure(self, idx) -> bool:
        if self.params.objective == "variance":
            t = self.stats[0][idx]
            return bool(np.all(t == t[0]))
        return False

    def grow(self, idx: np.ndarray, depth: int) -> int:
        node = self.new_node(idx)
        p = self.params
        m = len(idx)
        if (p.max_depth is not None and depth >= p.max_depth) or m < p.min_samples_split or m < 2 * p.min_samples_leaf:
            return node
        if self.pure(idx):
            return node
        feats = self.candidate_features(idx)
        Xn = self.X[np.ix_(idx, feats)]
        order = np.argsort(Xn, axis=0, kind="stable")
        xs = np.take_along_axis(Xn, order, axis=0)
        stats = [s[idx][order] for s in self.stats]
        found = _best_split(xs, stats, p)
        if found is None:
            return node
        gain, col, pos = found
        if p.objective == "newton" and not gain > 0:
            return node
        lo, hi = xs[pos, col], xs[pos + 1, col]
        thr = 0.5 * (lo + hi)
        if not lo < thr:
            thr = hi
        f = int(feats[col])
        mask = self.X[idx, f] < thr
        self.feature[node] = f
        self.threshold[node] = float(thr)
        self.left[node] = self.grow(idx[mask], depth + 1)
        self.right[node] = self.grow(idx[~mask], depth + 1)
        return node

    def tree(self) -> Tree:
        return Tree(self.feature, self.threshold, self.left, self.right, self.value, self.cover, self.d)


def fit_tree(X, targets=None, params: TreeParams | None = None, *, gradients=None, hessians=None,
             rng: np.random.Generator | None = None) -> Tree:
    """Grow one tree greedily.

    With ``objective="variance"`` pass ``targets``; splits maximise the SSE
    reduction and leaves hold the mean. With ``objective="newton"`` pass
    ``gradients`` and ``hessians``; splits maximise the second-order gain and
    leaves hold ``-G / (H + reg_lambda)``.
    """
    params = params or TreeParams()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("fit_tree needs at least one row")
    n = X.shape[0]
    if params.objective == "variance":
        if targets is None:
            raise ValueError("variance objective needs targets")
        stats = [np.asarray(targets, dtype=float).reshape(n)]
    else:
        if gradients is None or hessians is None:
            raise ValueError("newton objective needs gradients and hessians")
        stats = [np.asarray(gradients, dtype=float).reshape(n), np.asarray(hessians, dtype=float).reshape(n)]
    for s in stats:
        if not np.all(np.isfinite(s)):
            raise ValueError("targets must be finite")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature value")
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    b = _Builder(X, stats, params, rng)
    b.grow(np.arange(n), 0)
    return b.tree()
