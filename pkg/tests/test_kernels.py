import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from o2c.dtree import _kernels
from o2c.dtree import TrainParams, compile_tree, train

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not importable or disabled")


def _data(seed, n=60, L=5, k=4, hi=50):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, hi, size=(n, L)).astype(np.uint64)
    if seed % 3 == 0:
        X[:, 0] = np.uint64(2**64 - 1) - X[:, 0]
    return X, rng.integers(0, k, size=n).astype(np.int64)


@needs_numba
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_best_split_parity(seed):
    X, y = _data(seed)
    assert _kernels.best_split_numba(X, y, 4) == _kernels.best_split_numpy(X, y, 4)


@needs_numba
@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_predict_parity(seed):
    X, y = _data(seed, n=200)
    flat = compile_tree(train(X, y, TrainParams(max_depth=8)), X.shape[1])
    args = (flat.children_left, flat.children_right, flat.feature, flat.unsigned_thresholds(), flat.value)
    a, bad_a = _kernels.predict_numba(*args, X, 14)
    b, bad_b = _kernels.predict_numpy(*args, X, 14)
    assert bad_a == bad_b == -1
    assert np.array_equal(a, b)
    # an exhausted step budget is reported on the same row
    _, bad_a = _kernels.predict_numba(*args, X, 1)
    _, bad_b = _kernels.predict_numpy(*args, X, 1)
    assert bad_a == bad_b


def test_constant_columns_give_no_split():
    X = np.full((5, 3), 7, dtype=np.uint64)
    y = np.array([0, 1, 0, 1, 0])
    assert _kernels.best_split_numpy(X, y, 2)[0] == -1
    if _kernels.HAVE_NUMBA:
        assert _kernels.best_split_numba(X, y, 2)[0] == -1


def test_env_flag_selects_numpy_and_models_agree(tmp_path):
    script = (
        "import numpy as np\n"
        "from o2c.dtree import _kernels, train, compile_tree\n"
        "from o2c.dtree.flat import dumps_model\n"
        "rng = np.random.default_rng(1)\n"
        "X = rng.integers(0, 30, size=(120, 4)).astype(np.uint64)\n"
        "y = (X[:, 0] > X[:, 1]).astype(int) + (X[:, 2] > 20)\n"
        "print(_kernels.backend())\n"
        "print(dumps_model(compile_tree(train(X, y), 4)), end='')\n"
    )
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, O2C_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", script], env=env, capture_output=True, text=True, check=True)
        backend, model = res.stdout.split("\n", 1)
        out[flag] = (backend, model)
    assert out["1"][0] == "numpy"
    if out["0"][0] == "numba":
        assert out["0"][1] == out["1"][1]
