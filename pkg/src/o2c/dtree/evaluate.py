"""Stratified k-fold cross-validation with accuracy and macro F1."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import StructuralError
from .cart import TrainParams, train
from .flat import EvalBudget, Granularity, compile_tree, predict_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Score:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.4f} ± {self.std:.4f}"

    def to_dict(self) -> dict:
        return {"mean": round(self.mean, 12), "std": round(self.std, 12)}


@dataclass(frozen=True)
class CVResult:
    accuracy: Score
    macro_f1: Score
    fold_accuracy: tuple[float, ...]
    fold_macro_f1: tuple[float, ...]
    excluded_classes: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy.to_dict(),
            "macro_f1": self.macro_f1.to_dict(),
            "fold_accuracy": [round(v, 12) for v in self.fold_accuracy],
            "fold_macro_f1": [round(v, 12) for v in self.fold_macro_f1],
            "excluded_classes": list(self.excluded_classes),
        }


def stratified_folds(y, k: int, seed: int = 0):
    """Return ``(train_idx, test_idx)`` pairs and the classes held out of testing.

    Each class is shuffled independently and dealt round-robin into the k
    folds, so every fold's test set holds every class with at least k
    samples. Rarer classes stay in all training folds and never get tested.
    """
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(y) < k:
        raise StructuralError(f"{len(y)} samples cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.full(len(y), -1, dtype=np.int64)
    excluded = []
    for c in np.unique(y):
        members = np.flatnonzero(y == c)
        if len(members) < k:
            excluded.append(int(c))
            continue
        members = members[rng.permutation(len(members))]
        fold_of[members] = np.arange(len(members)) % k
    if excluded:
        log.warning("classes %s have fewer than %d samples; kept in training only", excluded, k)
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train_idx = np.flatnonzero(fold_of != f)
        folds.append((train_idx, test))
    return folds, tuple(excluded)


def accuracy(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    if len(y_true) == 0:
        return 0.0
    return float(np.mean(y_true == np.asarray(y_pred)))


def confusion_matrix(y_true, y_pred, labels=None) -> tuple[np.ndarray, list]:
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if labels is None:
        labels = sorted(set(y_true.tolist()) | set(y_pred.tolist()))
    pos = {lab: i for i, lab in enumerate(labels)}
    m = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(y_true.tolist(), y_pred.tolist()):
        m[pos[t], pos[p]] += 1
    return m, list(labels)


def macro_f1_from_confusion(m: np.ndarray) -> float:
    tp = np.diag(m).astype(float)
    fp = m.sum(axis=0) - tp
    fn = m.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(f1.mean()) if len(f1) else 0.0


def macro_f1(y_true, y_pred) -> float:
    """Unweighted mean of per-class F1 over every label seen in either array."""
    m, _ = confusion_matrix(y_true, y_pred)
    return macro_f1_from_confusion(m)


def _summarize(acc, f1, excluded) -> CVResult:
    return CVResult(Score(float(np.mean(acc)), float(np.std(acc))),
                    Score(float(np.mean(f1)), float(np.std(f1))),
                    tuple(acc), tuple(f1), excluded)


def cross_validate(X, y, params: TrainParams | None = None, k: int = 5, seed: int = 0,
                   budget: EvalBudget | None = None,
                   granularity: Granularity = Granularity.TYPE) -> CVResult:
    """Train on k-1 folds, score the quantized tree on the held-out fold."""
    params = params or TrainParams()
    budget = budget or EvalBudget(max_depth=max(params.max_depth, 1))
    X = np.ascontiguousarray(X, dtype=np.uint64)
    y = np.asarray(y, dtype=np.int64)
    folds, excluded = stratified_folds(y, k, seed)
    accs, f1s = [], []
    for train_idx, test_idx in folds:
        tree = train(X[train_idx], y[train_idx], params)
        flat = compile_tree(tree, X.shape[1], granularity)
        pred = predict_many(flat, X[test_idx], budget)
        accs.append(accuracy(y[test_idx], pred))
        f1s.append(macro_f1(y[test_idx], pred))
    return _summarize(accs, f1s, excluded)


def nearest_centroid_cv(X, y, k: int = 5, seed: int = 0) -> CVResult:
    """Baseline oracle on the same folds: assign each test row to the closest
    class mean under plain Euclidean distance."""
    Xf = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    folds, excluded = stratified_folds(y, k, seed)
    accs, f1s = [], []
    for train_idx, test_idx in folds:
        pred = nearest_centroid_predict(Xf[train_idx], y[train_idx], Xf[test_idx])
        accs.append(accuracy(y[test_idx], pred))
        f1s.append(macro_f1(y[test_idx], pred))
    return _summarize(accs, f1s, excluded)


def nearest_centroid_predict(X_train, y_train, X_test) -> np.ndarray:
    classes = np.unique(y_train)
    cents = np.stack([X_train[y_train == c].mean(axis=0) for c in classes])
    d = np.stack([((X_test - c) ** 2).sum(axis=1) for c in cents], axis=1)
    return classes[np.argmin(d, axis=1)]


def depth_sweep(X, y, depths=(3, 7, 10, 14), k: int = 5, seed: int = 0) -> dict[int, CVResult]:
    return {d: cross_validate(X, y, TrainParams(max_depth=d), k=k, seed=seed) for d in depths}
