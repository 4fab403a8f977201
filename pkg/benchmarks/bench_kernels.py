"""Time the numba and numpy kernels on the same inputs.

    python benchmarks/bench_kernels.py [--rows N] [--words L] [--repeat R]

The numba path is compiled once before timing. Both paths must agree, so the
script also checks that their outputs are identical.
"""

import argparse
import time

import numpy as np

from o2c.dtree import _kernels
from o2c.dtree.cart import TrainParams, train
from o2c.dtree.flat import compile_tree
from o2c.scenario import generate_training_world
from o2c.profiler import profile_trace


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=200, help="rows per type")
    ap.add_argument("--words", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    trace, spec = generate_training_world(11, 20, args.rows, 0.9)
    ds = profile_trace(trace, spec, args.words)
    X, y = ds.X, ds.y_type
    classes, yi = np.unique(y, return_inverse=True)
    print(f"dataset {X.shape[0]} x {X.shape[1]}, {len(classes)} classes")

    flat = compile_tree(train(X, y, TrainParams(max_depth=14)), X.shape[1])
    thr = flat.unsigned_thresholds()
    tree_args = (flat.children_left, flat.children_right, flat.feature, thr, flat.value)

    rows = []
    t_np, split_np = best_of(lambda: _kernels.best_split_numpy(X, yi, len(classes)), args.repeat)
    t_pnp, pred_np = best_of(lambda: _kernels.predict_numpy(*tree_args, X, 14), args.repeat)
    rows.append(("best_split", "numpy", t_np))
    rows.append(("predict_batch", "numpy", t_pnp))
    if _kernels.HAVE_NUMBA:
        _kernels.best_split_numba(X[:4], yi[:4], len(classes))
        _kernels.predict_numba(*tree_args, X[:4], 14)
        t_nb, split_nb = best_of(lambda: _kernels.best_split_numba(X, yi, len(classes)), args.repeat)
        t_pnb, pred_nb = best_of(lambda: _kernels.predict_numba(*tree_args, X, 14), args.repeat)
        assert split_nb[:3] == split_np[:3], (split_nb, split_np)
        assert np.array_equal(pred_nb[0], pred_np[0])
        rows.append(("best_split", "numba", t_nb))
        rows.append(("predict_batch", "numba", t_pnb))
    else:
        print("numba unavailable or disabled; timing numpy only")

    print(f"{'kernel':<14} {'backend':<7} {'seconds':>10}")
    for name, backend, t in rows:
        print(f"{name:<14} {backend:<7} {t:>10.5f}")


if __name__ == "__main__":
    main()
