from collections import Counter

import numpy as np
import pytest
from sklearn.metrics import f1_score
from sklearn.neighbors import NearestCentroid

from o2c.dtree import TrainParams, cross_validate, macro_f1, nearest_centroid_cv, stratified_folds
from o2c.dtree.evaluate import confusion_matrix, macro_f1_from_confusion, nearest_centroid_predict
from o2c.errors import StructuralError


def test_fixture_confusion_matrix():
    y_true = ["A", "A", "A", "B", "B", "B"]
    y_pred = ["A", "A", "B", "B", "B", "B"]
    m, labels = confusion_matrix(y_true, y_pred)
    assert labels == ["A", "B"] and m.tolist() == [[2, 1], [0, 3]]
    f1 = macro_f1_from_confusion(m)
    # by hand: F1_A = 2*2/(2*2+0+1) = 0.8, F1_B = 2*3/(2*3+1+0) = 6/7
    assert f1 == pytest.approx((0.8 + 6 / 7) / 2)
    assert f1 == pytest.approx(0.829, abs=5e-4)


def test_macro_f1_matches_sklearn():
    rng = np.random.default_rng(4)
    for _ in range(30):
        y_true = rng.integers(0, 5, size=50)
        y_pred = np.where(rng.random(50) < 0.6, y_true, rng.integers(0, 6, size=50))
        assert macro_f1(y_true, y_pred) == pytest.approx(f1_score(y_true, y_pred, average="macro"))


def test_folds_are_stratified_and_disjoint():
    y = np.array([0] * 23 + [1] * 11 + [2] * 5 + [3] * 3)
    folds, excluded = stratified_folds(y, 5, seed=9)
    assert excluded == (3,)
    tested = np.concatenate([t for _, t in folds])
    assert len(tested) == len(set(tested.tolist())) == 39
    for train_idx, test_idx in folds:
        assert not set(train_idx) & set(test_idx)
        assert set(np.flatnonzero(y == 3)) <= set(train_idx)
        counts = Counter(y[test_idx].tolist())
        assert set(counts) == {0, 1, 2}
        assert counts[0] in (4, 5) and counts[1] in (2, 3) and counts[2] == 1


def test_folds_depend_only_on_seed():
    y = np.repeat(np.arange(4), 10)
    a, _ = stratified_folds(y, 5, seed=1)
    b, _ = stratified_folds(y, 5, seed=1)
    c, _ = stratified_folds(y, 5, seed=2)
    assert all(np.array_equal(x[1], z[1]) for x, z in zip(a, b))
    assert any(not np.array_equal(x[1], z[1]) for x, z in zip(a, c))


def test_fold_errors():
    with pytest.raises(StructuralError):
        stratified_folds([0, 1, 0], 5)
    with pytest.raises(ValueError):
        stratified_folds([0, 1, 0, 1], 1)


def test_separable_data_scores_one():
    # a wide margin, so a held-out row can never fall between the two classes
    X = np.array([[v + 80 * (v >= 20), 0] for v in range(40)], dtype=np.uint64)
    y = (np.arange(40) >= 20).astype(int)
    res = cross_validate(X, y, TrainParams(max_depth=3), k=5)
    assert res.accuracy.mean == 1.0 and res.macro_f1.mean == 1.0
    assert res.accuracy.std == 0.0 and len(res.fold_accuracy) == 5


def test_nearest_centroid_matches_sklearn():
    rng = np.random.default_rng(8)
    centers = rng.integers(0, 1000, size=(4, 6))
    y = np.repeat(np.arange(4), 30)
    X = (centers[y] + rng.integers(-300, 300, size=(120, 6))).clip(0).astype(np.uint64)
    Xf = X.astype(float)
    ours = nearest_centroid_predict(Xf[::2], y[::2], Xf[1::2])
    ref = NearestCentroid().fit(Xf[::2], y[::2]).predict(Xf[1::2])
    assert np.array_equal(ours, ref)
    res = nearest_centroid_cv(X, y, k=5, seed=0)
    assert 0.0 <= res.accuracy.mean <= 1.0 and len(res.fold_accuracy) == 5
