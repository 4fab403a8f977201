"""Hot loops for tree training and batch inference.

Each kernel exists twice: a numba ``@njit`` loop and a pure-numpy path. The
numba path is used when numba imports and ``O2C_DISABLE_NUMBA`` is unset (or
``0``). Both paths return bit-identical results; ``tests/test_kernels.py``
checks this and ``benchmarks/bench_kernels.py`` times them.
"""

from __future__ import annotations

import os

import numpy as np

SIGN_BIT = np.uint64(1 << 63)

_disabled = os.environ.get("O2C_DISABLE_NUMBA", "0") not in ("", "0")
try:
    if _disabled:
        raise ImportError("disabled by O2C_DISABLE_NUMBA")
    from numba import njit
except ImportError:
    njit = None

HAVE_NUMBA = njit is not None


def best_split_numpy(X: np.ndarray, y: np.ndarray, n_classes: int):
    """Best Gini split of ``X`` (uint64, n x L) for class indices ``y``.

    Maximizes ``sum(l_c^2)/n_l + sum(r_c^2)/n_r``, which is equivalent to
    minimizing the weighted Gini impurity of the children. Returns
    ``(feature, lo, hi, score)`` where the split lies between the adjacent
    distinct values ``lo < hi``; ``feature == -1`` when no split exists.
    Ties go to the lowest feature, then the smallest threshold.
    """
    n, n_feat = X.shape
    total = np.bincount(y, minlength=n_classes).astype(np.int64)
    best = (-1, 0, 0, -np.inf)
    if n < 2:
        return best
    nl = np.arange(1, n, dtype=np.int64)
    nr = n - nl
    rows = np.arange(n)
    for f in range(n_feat):
        col = X[:, f]
        if col.min() == col.max():
            continue
        order = np.argsort(col, kind="stable")
        sv = col[order]
        onehot = np.zeros((n, n_classes), dtype=np.int64)
        onehot[rows, y[order]] = 1
        left = np.cumsum(onehot, axis=0)[:-1]
        a = (left * left).sum(axis=1)
        right = total - left
        b = (right * right).sum(axis=1)
        score = a / nl + b / nr
        score[sv[:-1] == sv[1:]] = -np.inf
        i = int(np.argmax(score))
        if score[i] > best[3]:
            best = (f, int(sv[i]), int(sv[i + 1]), float(score[i]))
    return best


def predict_numpy(left, right, feature, thr_u, value, X, max_steps):
    """Batch traversal; returns ``(predictions, first_failing_row or -1)``."""
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    rows = np.arange(n)
    for _ in range(max_steps):
        active = left[node] != -1
        if not active.any():
            break
        feat = np.where(active, feature[node], 0)
        go_left = X[rows, feat] <= thr_u[node]
        node = np.where(active, np.where(go_left, left[node], right[node]), node)
    stuck = np.flatnonzero(left[node] != -1)
    if stuck.size:
        return value[node], int(stuck[0])
    return value[node], -1


def _best_split_loop(X, y, n_classes):
    n, n_feat = X.shape
    total = np.zeros(n_classes, np.int64)
    for i in range(n):
        total[y[i]] += 1
    b0 = 0
    for c in range(n_classes):
        b0 += total[c] * total[c]
    best_f = -1
    best_lo = np.uint64(0)
    best_hi = np.uint64(0)
    best_score = -np.inf
    left = np.zeros(n_classes, np.int64)
    col = np.empty(n, np.uint64)
    for f in range(n_feat):
        mn = X[0, f]
        mx = mn
        for i in range(n):
            v = X[i, f]
            col[i] = v
            if v < mn:
                mn = v
            if v > mx:
                mx = v
        if mn == mx:
            continue
        order = np.argsort(col)
        left[:] = 0
        a = 0
        b = b0
        for i in range(n - 1):
            c = y[order[i]]
            a += 2 * left[c] + 1
            b -= 2 * (total[c] - left[c]) - 1
            left[c] += 1
            v = col[order[i]]
            w = col[order[i + 1]]
            if v == w:
                continue
            nl = i + 1
            s = a / nl + b / (n - nl)
            if s > best_score:
                best_score = s
                best_f = f
                best_lo = v
                best_hi = w
    return best_f, best_lo, best_hi, best_score


def _predict_loop(left, right, feature, thr_u, value, X, max_steps, out):
    for r in range(X.shape[0]):
        node = 0
        steps = 0
        while left[node] != -1:
            if steps >= max_steps:
                return r
            if X[r, feature[node]] <= thr_u[node]:
                node = left[node]
            else:
                node = right[node]
            steps += 1
        out[r] = value[node]
    return -1


if HAVE_NUMBA:
    _best_split_nb = njit(cache=True, nogil=True)(_best_split_loop)
    _predict_nb = njit(cache=True, nogil=True)(_predict_loop)

    def best_split_numba(X, y, n_classes):
        f, lo, hi, s = _best_split_nb(np.ascontiguousarray(X), np.ascontiguousarray(y, dtype=np.int64),
                                      n_classes)
        return int(f), int(lo), int(hi), float(s)

    def predict_numba(left, right, feature, thr_u, value, X, max_steps):
        out = np.empty(X.shape[0], dtype=np.int64)
        bad = _predict_nb(left, right, feature, thr_u, value, np.ascontiguousarray(X), max_steps, out)
        return out, int(bad)

    best_split = best_split_numba
    predict_batch = predict_numba
else:
    best_split_numba = predict_numba = None
    best_split = best_split_numpy
    predict_batch = predict_numpy


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
