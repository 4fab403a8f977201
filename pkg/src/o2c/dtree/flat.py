"""Five-array tree encoding, integer quantization and the budgeted evaluator.

A :class:`FlatTree` stores ``children_left``, ``children_right``, ``feature``,
``threshold`` and ``value`` as parallel arrays, the layout a BPF array map
holds. After :func:`quantize` every threshold is an integer, stored as signed
64-bit with a bias of ``2**63``: a stored value ``s`` encodes the unsigned
threshold ``s + 2**63``. Features are unsigned words, so the evaluator
compares ``x <= s + 2**63`` in the unsigned domain and never needs floats.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from ..errors import BudgetExceeded, StructuralError
from . import _kernels
from .cart import TreeNode

BIAS = 1 << 63
U64_MAX = (1 << 64) - 1
# node index, step counter, loaded word, threshold
EVAL_FRAME_BYTES = 32


class Granularity(str, enum.Enum):
    TYPE = "Type"
    COMPARTMENT = "Compartment"


@dataclass(frozen=True)
class EvalBudget:
    max_depth: int = 14
    max_nodes: int = 1 << 15
    max_steps: int | None = None
    stack_bytes: int = 512

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")

    @property
    def steps(self) -> int:
        return self.max_steps if self.max_steps is not None else self.max_depth


@dataclass
class FlatTree:
    children_left: np.ndarray
    children_right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    meta: dict = field(default_factory=dict)
    threshold_real: list | None = None
    quantized: bool = False

    @property
    def n_nodes(self) -> int:
        return len(self.children_left)

    def is_leaf(self, node: int) -> bool:
        return self.children_left[node] == -1

    def unsigned_thresholds(self) -> np.ndarray:
        return self.threshold.astype(np.int64).view(np.uint64) ^ _kernels.SIGN_BIT

    def to_dict(self) -> dict:
        if not self.quantized:
            raise ValueError("only quantized trees are serialized")
        return {
            "children_left": [int(v) for v in self.children_left],
            "children_right": [int(v) for v in self.children_right],
            "feature": [int(v) for v in self.feature],
            "threshold": [int(v) for v in self.threshold],
            "value": [int(v) for v in self.value],
            "meta": dict(sorted(self.meta.items())),
        }

    @classmethod
    def from_dict(cls, d) -> "FlatTree":
        names = ("children_left", "children_right", "feature", "threshold", "value")
        for name in names:
            if name not in d:
                raise StructuralError(f"model file misses array {name!r}")
        lengths = {name: len(d[name]) for name in names}
        if len(set(lengths.values())) != 1:
            raise StructuralError(f"array length mismatch: {lengths}")
        arrays = [np.array(d[name], dtype=np.int64) for name in names]
        meta = dict(d.get("meta", {}))
        if meta.get("n_nodes", lengths["feature"]) != lengths["feature"]:
            raise StructuralError("meta.n_nodes disagrees with array length")
        return cls(*arrays, meta=meta, quantized=True)


def _classes_of(node: TreeNode) -> set:
    if node.is_leaf:
        return {node.leaf_value}
    return _classes_of(node.left) | _classes_of(node.right)


def flatten(tree: TreeNode, n_features: int, granularity: Granularity = Granularity.TYPE,
            n_classes: int | None = None) -> FlatTree:
    """Number nodes breadth-first and fill the five arrays.

    The result still carries real thresholds in ``threshold_real``; the
    ``threshold`` array stays zero until :func:`quantize`.
    """
    order: list[TreeNode] = []
    queue = deque([tree])
    while queue:
        node = queue.popleft()
        order.append(node)
        if not node.is_leaf:
            queue.append(node.left)
            queue.append(node.right)
    ids = {id(n): i for i, n in enumerate(order)}
    n = len(order)
    left = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    feat = np.full(n, -2, dtype=np.int64)
    value = np.full(n, -1, dtype=np.int64)
    real: list = [None] * n
    for i, node in enumerate(order):
        if node.is_leaf:
            value[i] = node.leaf_value
        else:
            left[i] = ids[id(node.left)]
            right[i] = ids[id(node.right)]
            feat[i] = node.feature
            real[i] = node.threshold
    meta = {
        "n_nodes": n,
        "max_depth": tree.height(),
        "n_features": int(n_features),
        "n_classes": int(n_classes if n_classes is not None else len(_classes_of(tree))),
        "granularity": Granularity(granularity).value,
        "threshold_bias": BIAS,
    }
    return FlatTree(left, right, feat, np.zeros(n, dtype=np.int64), value, meta, real, quantized=False)


def quantize(flat: FlatTree) -> FlatTree:
    """Replace each internal threshold ``t`` by ``floor(t)``.

    For integer inputs ``x <= t`` holds exactly when ``x <= floor(t)``.
    Thresholds at or above ``2**64 - 1`` saturate (every word goes left);
    a negative threshold makes the left subtree unreachable for unsigned
    words, so the node is rewired to send both sides right.
    """
    if flat.threshold_real is None:
        raise ValueError("tree has no real thresholds to quantize")
    left = flat.children_left.copy()
    stored = np.zeros(flat.n_nodes, dtype=np.int64)
    for i in range(flat.n_nodes):
        if left[i] == -1:
            continue
        q = math.floor(flat.threshold_real[i])
        if q < 0:
            left[i] = flat.children_right[i]
            q = 0
        q = min(q, U64_MAX)
        stored[i] = q - BIAS
    return replace(flat, children_left=left, threshold=stored, quantized=True,
                   children_right=flat.children_right.copy(), feature=flat.feature.copy(),
                   value=flat.value.copy(), meta=dict(flat.meta))


def verify(flat: FlatTree, budget: EvalBudget = EvalBudget()) -> int:
    """Static pre-check in the spirit of a bytecode verifier.

    Rejects malformed arrays, out-of-range indices, cycles and any path that
    needs more than ``budget.max_depth`` comparisons. Returns the depth.
    """
    n = flat.n_nodes
    arrays = (flat.children_left, flat.children_right, flat.feature, flat.threshold, flat.value)
    if any(len(a) != n for a in arrays):
        raise StructuralError("the five arrays differ in length")
    if n == 0:
        raise StructuralError("empty tree")
    if n > budget.max_nodes:
        raise BudgetExceeded(f"{n} nodes exceed the budget of {budget.max_nodes}")
    if EVAL_FRAME_BYTES > budget.stack_bytes:
        raise BudgetExceeded(f"evaluator frame of {EVAL_FRAME_BYTES} bytes exceeds stack budget")
    n_features = flat.meta.get("n_features")
    left, right, feat = flat.children_left, flat.children_right, flat.feature
    for i in range(n):
        lo, ro = int(left[i]), int(right[i])
        if (lo == -1) != (ro == -1):
            raise StructuralError(f"node {i} has exactly one child")
        if lo == -1:
            continue
        if not (0 <= lo < n and 0 <= ro < n):
            raise StructuralError(f"node {i} points outside the arrays")
        f = int(feat[i])
        if f < 0 or (n_features is not None and f >= n_features):
            raise StructuralError(f"node {i} reads feature {f} outside the vector")
    frontier = {0}
    depth = 0
    while True:
        internal = {i for i in frontier if left[i] != -1}
        if not internal:
            return depth
        if depth >= budget.max_depth:
            raise BudgetExceeded(f"tree needs more than {budget.max_depth} comparisons")
        frontier = {int(left[i]) for i in internal} | {int(right[i]) for i in internal}
        depth += 1


_VERIFIED = "_verified_budgets"


def _ensure_verified(flat: FlatTree, budget: EvalBudget) -> None:
    done = flat.__dict__.setdefault(_VERIFIED, set())
    if budget not in done:
        verify(flat, budget)
        done.add(budget)


def predict(flat: FlatTree, x, budget: EvalBudget = EvalBudget()) -> int:
    """Integer-only traversal with constant working memory."""
    if not flat.quantized:
        raise ValueError("quantize the tree before integer evaluation")
    _ensure_verified(flat, budget)
    n_features = flat.meta.get("n_features")
    if n_features is not None and len(x) != n_features:
        raise StructuralError(f"feature vector has {len(x)} words, model expects {n_features}")
    node = 0
    steps = 0
    while flat.children_left[node] != -1:
        if steps >= budget.steps:
            raise BudgetExceeded(f"traversal exceeded {budget.steps} steps")
        f = flat.feature[node]
        if int(x[f]) <= int(flat.threshold[node]) + BIAS:
            node = flat.children_left[node]
        else:
            node = flat.children_right[node]
        steps += 1
    return int(flat.value[node])


def predict_real(flat: FlatTree, x) -> int:
    """Reference traversal against the pre-quantization thresholds."""
    node = 0
    while flat.children_left[node] != -1:
        if int(x[flat.feature[node]]) <= flat.threshold_real[node]:
            node = flat.children_left[node]
        else:
            node = flat.children_right[node]
    return int(flat.value[node])


def predict_many(flat: FlatTree, X, budget: EvalBudget = EvalBudget()) -> np.ndarray:
    """Vectorized :func:`predict` over the rows of ``X``."""
    if not flat.quantized:
        raise ValueError("quantize the tree before integer evaluation")
    _ensure_verified(flat, budget)
    X = np.ascontiguousarray(X, dtype=np.uint64)
    if X.ndim != 2 or X.shape[1] != flat.meta.get("n_features", X.shape[1]):
        raise StructuralError("feature matrix shape does not match the model")
    out, bad = _kernels.predict_batch(flat.children_left, flat.children_right, flat.feature,
                                      flat.unsigned_thresholds(), flat.value, X, budget.steps)
    if bad >= 0:
        raise BudgetExceeded(f"row {bad} exceeded {budget.steps} traversal steps")
    return out


def compile_tree(tree: TreeNode, n_features: int, granularity=Granularity.TYPE,
                 budget: EvalBudget | None = None) -> FlatTree:
    """flatten + quantize + verify in one step."""
    flat = quantize(flatten(tree, n_features, granularity))
    if budget is not None:
        verify(flat, budget)
    return flat


def dumps_model(flat: FlatTree) -> str:
    return json.dumps(flat.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def save_model(flat: FlatTree, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(flat))


def load_model(path) -> FlatTree:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise StructuralError(f"model file is not JSON: {exc.msg}") from None
    return FlatTree.from_dict(d)


def real_threshold(lo: int, hi: int) -> Fraction:
    return Fraction(lo + hi, 2)
