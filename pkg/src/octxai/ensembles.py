"""Random forest and Newton gradient-boosting classifiers.

Both models output the probability of the positive class (MS = 1).

The forest grows fully on bootstrap resamples with variance splits on the
0/1 labels (equivalent to Gini impurity up to a constant factor: the Gini
decrease of a binary node is twice its variance decrease). Each tree then
votes with the majority class of its leaf, so the forest probability is
the fraction of trees voting MS.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .trees import LEAF, Tree, TreeParams, fit_tree


def sigmoid(z):
    return expit(np.asarray(z, dtype=float))


def logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def log_loss(y, p) -> float:
    p = np.clip(np.asarray(p, dtype=float), 1e-300, 1 - 1e-16)
    y = np.asarray(y, dtype=float)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def score_loss(y, score) -> float:
    """Mean logistic loss computed from log-odds (stable for large scores)."""
    score = np.asarray(score, dtype=float)
    return float(np.mean(np.logaddexp(0.0, score) - np.asarray(y, dtype=float) * score))


def _check_binary(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError("labels must be a vector")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("both classes must be present in the training labels")
    return y.astype(float)


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    bootstrap: bool = True
    max_depth: int | None = None
    max_features: str | int = "sqrt"
    min_samples_leaf: int = 1
    min_samples_split: int = 2
    seed: int = 0


@dataclass(frozen=True)
class BoostingParams:
    n_estimators: int = 100
    learning_rate: float = 0.3
    max_depth: int = 6
    reg_lambda: float = 1.0


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    params: ForestParams
    n_features: int

    kind = "forest"

    def predict_proba(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        if not self.trees:
            raise ValueError("forest has no trees")
        votes = np.zeros(X.shape[0])
        for t in self.trees:
            votes += t.predict(X)
        return votes / len(self.trees)

    def raw_score(self, X) -> np.ndarray:
        return self.predict_proba(X)


@dataclass(frozen=True, eq=False)
class BoostedModel:
    base_score: float
    trees: tuple[Tree, ...]
    params: BoostingParams
    n_features: int
    train_loss: tuple[float, ...] = field(default=(), repr=False)

    kind = "boosted"

    def raw_score(self, X) -> np.ndarray:
        X = _check_X(X, self.n_features)
        s = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            s += self.params.learning_rate * t.predict(X)
        return s

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.raw_score(X))


def _check_X(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected {d} feature columns, got shape {X.shape}")
    return X


def _vote_tree(tree: Tree) -> Tree:
    # leaf mean is the MS fraction; a tie votes HC
    votes = np.where(tree.left == LEAF, (tree.value > 0.5).astype(float), tree.value)
    return tree.with_values(votes)


def fit_random_forest(X, y, params: ForestParams | None = None) -> ForestModel:
    params = params or ForestParams()
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    n = X.shape[0]
    tp = TreeParams(
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        min_samples_split=params.min_samples_split,
        max_features=params.max_features,
        objective="variance",
    )
    seeds = np.random.SeedSequence(params.seed).spawn(params.n_estimators)
    trees = []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        idx = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        trees.append(_vote_tree(fit_tree(X[idx], y[idx], tp, rng=rng)))
    return ForestModel(tuple(trees), params, X.shape[1])


def fit_gradient_boosting(X, y, params: BoostingParams | None = None) -> BoostedModel:
    """Newton boosting on the logistic loss, no row or column subsampling."""
    params = params or BoostingParams()
    X = np.asarray(X, dtype=float)
    y = _check_binary(y)
    base = logit(float(np.mean(y)))
    tp = TreeParams(max_depth=params.max_depth, objective="newton", reg_lambda=params.reg_lambda)
    score = np.full(X.shape[0], base)
    trees = []
    losses = [score_loss(y, score)]
    for _ in range(params.n_estimators):
        p = sigmoid(score)
        tree = fit_tree(X, params=tp, gradients=p - y, hessians=p * (1 - p))
        trees.append(tree)
        score = score + params.learning_rate * tree.predict(X)
        losses.append(score_loss(y, score))
    return BoostedModel(base, tuple(trees), params, X.shape[1], tuple(losses))


def predict_proba(model, X) -> np.ndarray:
    return model.predict_proba(X)
