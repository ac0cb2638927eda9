"""Subject-level cross-validation, SMOTE, metrics and Welch's t-test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc

from .data import EyeSample, FeatureMatrix, ZoneMap, build_feature_matrix
from .ebm import EbmParams, fit_ebm
from .ensembles import BoostingParams, ForestParams, fit_gradient_boosting, fit_random_forest

MODEL_KINDS = ("GB", "RF", "EBM", "EBM+i")
THRESHOLD = 0.5


class LeakageError(Exception):
    pass


class UndefinedMetricError(ValueError):
    pass


# -- folds -------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    train: tuple[frozenset, ...]
    test: tuple[frozenset, ...]

    def rows(self) -> list[tuple[int, str, str]]:
        """``(fold, subject_id, split)`` rows, sorted for stable CSV output."""
        out = []
        for f in range(self.k):
            out += [(f, sid, "train") for sid in sorted(self.train[f])]
            out += [(f, sid, "test") for sid in sorted(self.test[f])]
        return out

    @classmethod
    def from_rows(cls, rows, seed: int = 0) -> "FoldPlan":
        k = max(int(r[0]) for r in rows) + 1
        train = [set() for _ in range(k)]
        test = [set() for _ in range(k)]
        for f, sid, split in rows:
            (train if split == "train" else test)[int(f)].add(sid)
        return cls(k, seed, tuple(map(frozenset, train)), tuple(map(frozenset, test)))


def subject_kfold(samples: Sequence[EyeSample], k: int = 10, seed: int = 0,
                  test_fraction: float | None = None) -> FoldPlan:
    """Stratified subject-level k-fold plan.

    Subjects are shuffled within each group, MS first, and dealt round-robin
    into folds, which keeps fold sizes within one subject of each other and
    the group ratio within one subject per group.

    With ``test_fraction`` set, the plan is instead ``k`` independent
    stratified splits holding out that fraction of each group's subjects
    (test sides may then overlap across folds, never within one).
    """
    groups: dict[str, str] = {}
    for s in samples:
        groups.setdefault(s.subject_id, s.group)
    by_group = {g: sorted(sid for sid, gg in groups.items() if gg == g) for g in ("MS", "HC")}
    present = [len(v) for v in by_group.values() if v]
    smallest = min(present) if present else 0
    if k < 2 or k > smallest:
        raise ValueError(f"k={k} needs 2 <= k <= subjects in the smallest group ({smallest})")
    rng = np.random.default_rng(seed)
    everyone = frozenset(groups)
    if test_fraction is not None:
        if not 0 < test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")
        tests = []
        for _ in range(k):
            t = set()
            for g in ("MS", "HC"):
                ids = by_group[g]
                n_test = max(1, int(round(test_fraction * len(ids))))
                t.update(ids[i] for i in rng.permutation(len(ids))[:n_test])
            tests.append(frozenset(t))
        return FoldPlan(k, seed, tuple(everyone - t for t in tests), tuple(tests))
    dealt = []
    for g in ("MS", "HC"):
        ids = by_group[g]
        dealt += [ids[i] for i in rng.permutation(len(ids))]
    test = [set() for _ in range(k)]
    for pos, sid in enumerate(dealt):
        test[pos % k].add(sid)
    return FoldPlan(k, seed, tuple(everyone - t for t in test), tuple(map(frozenset, test)))


def leakage_scan(plan: FoldPlan) -> list[tuple[int, str]]:
    return [(f, sid) for f in range(plan.k) for sid in sorted(plan.train[f] & plan.test[f])]


# -- SMOTE -------------------------------------------------------------------

@dataclass(frozen=True)
class SmoteDraw:
    rows: np.ndarray
    base: np.ndarray
    neighbor: np.ndarray
    u: np.ndarray


def smote(X_minority, n_synthetic: int, k_neighbors: int = 5, seed: int = 0) -> SmoteDraw:
    """Synthetic minority rows on segments between a row and one of its k nearest minority neighbours."""
    X = np.asarray(X_minority, dtype=float)
    m = X.shape[0]
    if m <= k_neighbors:
        raise ValueError(f"SMOTE needs more than k_neighbors={k_neighbors} minority rows (at least {k_neighbors + 1}), got {m}")
    if n_synthetic <= 0:
        return SmoteDraw(np.empty((0, X.shape[1])), np.empty(0, int), np.empty(0, int), np.empty(0))
    d2 = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k_neighbors]
    rng = np.random.default_rng(seed)
    base = rng.integers(0, m, size=n_synthetic)
    neighbor = nn[base, rng.integers(0, k_neighbors, size=n_synthetic)]
    u = rng.random(n_synthetic)
    rows = X[base] + u[:, None] * (X[neighbor] - X[base])
    return SmoteDraw(rows, base, neighbor, u)


def segment_residual(s, a, b) -> float:
    """Distance from ``s`` to the segment ``[a, b]``."""
    s, a, b = (np.asarray(v, dtype=float) for v in (s, a, b))
    ab = b - a
    denom = ab @ ab
    u = 0.0 if denom == 0 else float(np.clip((s - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(a + u * ab - s))


@dataclass(frozen=True)
class BalancedTrain:
    X: np.ndarray
    y: np.ndarray
    n_real: int
    minority_label: int
    draw: SmoteDraw
    minority_rows: np.ndarray


def balance_with_smote(X, y, k_neighbors: int = 5, seed: int = 0) -> BalancedTrain:
    """Oversample the minority class until both classes have equal counts."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n1 = int(y.sum())
    n0 = len(y) - n1
    minority = 1 if n1 < n0 else 0
    Xm = X[y == minority]
    draw = smote(Xm, abs(n0 - n1), k_neighbors, seed)
    Xb = np.vstack([X, draw.rows])
    yb = np.concatenate([y, np.full(len(draw.rows), minority)])
    return BalancedTrain(Xb, yb, len(y), minority, draw, Xm)


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float
    specificity: float
    f1: float
    auc: float
    auc_defined: bool = True

    def as_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": self.accuracy, "sensitivity": self.sensitivity,
            "specificity": self.specificity, "f1": self.f1, "auc": self.auc,
        }


def _pct(num, den) -> float:
    return 100.0 * num / den if den else math.nan


def auc_pairwise(scores, labels) -> float:
    """P(random positive outranks random negative), ties count one half."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    pos, neg = s[y == 1], s[y == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC needs both classes")
    diff = pos[:, None] - neg[None, :]
    return float((np.sum(diff > 0) + 0.5 * np.sum(diff == 0)) / (len(pos) * len(neg)))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """(fpr, tpr) points with one step per distinct score, descending threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=int)
    P, N = int(y.sum()), int(len(y) - y.sum())
    if P == 0 or N == 0:
        raise UndefinedMetricError("ROC needs both classes")
    thresholds = np.unique(s)[::-1]
    tpr = [0.0] + [np.sum((s >= t) & (y == 1)) / P for t in thresholds]
    fpr = [0.0] + [np.sum((s >= t) & (y == 0)) / N for t in thresholds]
    return np.array(fpr), np.array(tpr)


def compute_metrics(probabilities, labels, threshold: float = THRESHOLD) -> MetricsReport:
    p = np.asarray(probabilities, dtype=float)
    y = np.asarray(labels, dtype=int)
    if p.shape != y.shape:
        raise ValueError("probabilities and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    pred = (p >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    try:
        auc, defined = auc_pairwise(p, y), True
    except UndefinedMetricError:
        auc, defined = math.nan, False
    return MetricsReport(
        tp, fp, tn, fn,
        accuracy=_pct(tp + tn, len(y)),
        sensitivity=_pct(tp, tp + fn),
        specificity=_pct(tn, tn + fp),
        f1=_pct(2 * tp, 2 * tp + fp + fn),
        auc=auc,
        auc_defined=defined,
    )


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_t_test(mean1, sd1, n1, mean2, sd2, n2) -> WelchResult:
    """Two-sided Welch t-test from summary statistics.

    The p-value is the Student-t tail from the regularized incomplete beta
    function, ``p = I_{df/(df+t^2)}(df/2, 1/2)``.
    """
    if n1 < 2 or n2 < 2:
        raise ValueError("each group needs at least two observations")
    if not (sd1 > 0 and sd2 > 0):
        raise ValueError("standard deviations must be positive")
    v1, v2 = sd1**2 / n1, sd2**2 / n2
    t = (mean1 - mean2) / math.sqrt(v1 + v2)
    df = (v1 + v2) ** 2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1))
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return WelchResult(float(t), float(df), p)


# -- one fold ----------------------------------------------------------------

def make_model(kind: str, seed: int, overrides: dict | None = None):
    """Return a ``fit(X, y, feature_names)`` callable for a model kind with paper defaults."""
    o = dict(overrides or {})
    if kind == "GB":
        params = BoostingParams(**o)
        return lambda X, y, names: fit_gradient_boosting(X, y, params)
    if kind == "RF":
        params = ForestParams(**{**o, "seed": seed})
        return lambda X, y, names: fit_random_forest(X, y, params)
    if kind in ("EBM", "EBM+i"):
        params = EbmParams(**o)
        pairs = kind == "EBM+i"
        return lambda X, y, names: fit_ebm(X, y, params, feature_names=names, pairs=pairs)
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class FoldResult:
    fold: int
    metrics: MetricsReport
    probabilities: np.ndarray
    test: FeatureMatrix
    train: FeatureMatrix
    balanced: BalancedTrain = field(repr=False)
    model: object = field(repr=False)


def fold_matrices(samples, plan: FoldPlan, fold: int, feature_set: str, zones: ZoneMap | None):
    train_ids, test_ids = plan.train[fold], plan.test[fold]
    overlap = train_ids & test_ids
    if overlap:
        raise LeakageError(f"fold {fold}: subjects on both sides: {sorted(overlap)[:5]}")
    tr = [s for s in samples if s.subject_id in train_ids]
    te = [s for s in samples if s.subject_id in test_ids]
    if not tr or not te:
        raise ValueError(f"fold {fold} has an empty train or test side")
    return build_feature_matrix(tr, feature_set, zones), build_feature_matrix(te, feature_set, zones)


def run_fold(samples, plan: FoldPlan, fold: int, feature_set: str, model_kind: str,
             smote_seed: int, model_seed: int, zones: ZoneMap | None = None,
             k_neighbors: int = 5, model_overrides: dict | None = None) -> FoldResult:
    """Materialize, oversample the train side, fit, predict the untouched test side."""
    train, test = fold_matrices(samples, plan, fold, feature_set, zones)
    bal = balance_with_smote(train.rows, train.labels, k_neighbors, smote_seed)
    fit = make_model(model_kind, model_seed, model_overrides)
    model = fit(bal.X, bal.y, train.feature_names)
    prob = model.predict_proba(test.rows)
    return FoldResult(fold, compute_metrics(prob, test.labels), prob, test, train, bal, model)
