"""Greedy CART training with Gini impurity over integer quad-word features."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ..errors import StructuralError
from . import _kernels
from .features import stack_features


@dataclass
class TrainParams:
    max_depth: int = 14
    min_samples_split: int = 2
    criterion: str = "gini"

    def __post_init__(self):
        if self.criterion != "gini":
            raise ValueError(f"unsupported criterion {self.criterion!r}")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass
class TreeNode:
    """Training-time node. Internal nodes send ``x[feature] <= threshold`` left.

    ``threshold`` is the exact midpoint between two adjacent observed values,
    kept as a :class:`~fractions.Fraction` so that large 64-bit words never
    lose precision before quantization.
    """

    depth: int
    n_samples: int
    leaf_value: int | None = None
    feature: int | None = None
    threshold: Fraction | float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.leaf_value is not None

    def height(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.height(), self.right.height())

    def predict_one(self, x) -> int:
        node = self
        while not node.is_leaf:
            node = node.left if int(x[node.feature]) <= node.threshold else node.right
        return node.leaf_value


def train(X, y=None, params: TrainParams | None = None, split_fn=None) -> TreeNode:
    """Fit a classification tree.

    ``X`` is an ``(n, L)`` array of unsigned 64-bit words and ``y`` holds one
    integer label per row. A list of labeled :class:`FeatureVector` may be
    passed instead, with ``y`` left as ``None``. Splits are chosen by exhaustive search over
    midpoints of consecutive distinct values; ties favour the lowest feature
    index and then the smallest threshold, leaf ties the lowest label.
    """
    params = params or TrainParams()
    if y is None:
        vectors = list(X)
        if any(v.label is None for v in vectors):
            raise StructuralError("unlabeled feature vector in training data")
        y = [v.label for v in vectors]
        X = stack_features(vectors) if vectors else np.zeros((0, 0), dtype=np.uint64)
    X = np.ascontiguousarray(X, dtype=np.uint64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise StructuralError("cannot train on an empty dataset")
    if y.shape[0] != X.shape[0]:
        raise StructuralError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    classes, yi = np.unique(y, return_inverse=True)
    yi = yi.astype(np.int64)
    split_fn = split_fn or _kernels.best_split
    k = len(classes)

    def grow(idx: np.ndarray, depth: int) -> TreeNode:
        counts = np.bincount(yi[idx], minlength=k)
        node = TreeNode(depth=depth, n_samples=len(idx))
        majority = int(classes[int(np.argmax(counts))])
        if depth >= params.max_depth or len(idx) < params.min_samples_split or counts.max() == len(idx):
            node.leaf_value = majority
            return node
        f, lo, hi, _ = split_fn(X[idx], yi[idx], k)
        if f < 0:
            node.leaf_value = majority
            return node
        go_left = X[idx, f] <= np.uint64(lo)
        node.feature = f
        node.threshold = Fraction(lo + hi, 2)
        node.left = grow(idx[go_left], depth + 1)
        node.right = grow(idx[~go_left], depth + 1)
        return node

    return grow(np.arange(X.shape[0]), 0)
