"""Compiled vs numpy tree kernels on a retention-sized training problem.

    python3 benchmarks/bench_kernels.py [--rows 5000] [--repeat 5]

Also times a whole boosted fit under each path by re-running this script in a
child process with ``RETMATCH_NUMBA`` set.
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from retmatch import kernels


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def kernel_times(rows, repeat):
    rng = np.random.default_rng(0)
    X = np.ascontiguousarray(np.column_stack([rng.normal(size=(rows, 10)), rng.exponential(2.0, rows)]))
    g = rng.normal(size=rows)
    h = rng.uniform(0.05, 0.25, rows)
    node_of = rng.integers(0, 32, rows)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)

    from retmatch.boosting import fit_gbdt

    y = (rng.random(rows) < 0.5).astype(float)
    ens = fit_gbdt(X, y, n_trees=20, max_depth=6)
    pred_args = (X, ens.feature, ens.threshold, ens.left, ens.right, ens.value, ens.roots)

    out = {}
    for name, args in (
        ("best_splits", (X, g, h, node_of, order, 32, 1.0, 5)),
        ("predict_margin", pred_args),
    ):
        nb, np_ = kernels.KERNELS[name]
        nb(*args)  # compile outside the timing
        out[name] = {"numba": best_of(lambda: nb(*args), repeat), "numpy": best_of(lambda: np_(*args), repeat)}
    return out


def fit_time(rows):
    from retmatch.boosting import fit_gbdt

    rng = np.random.default_rng(1)
    X = np.column_stack([rng.normal(size=(rows, 10)), rng.exponential(2.0, rows)])
    y = (rng.random(rows) < 1 / (1 + np.exp(-X[:, 0] - X[:, -1] + 2))).astype(float)
    fit_gbdt(X[:200], y[:200], n_trees=2)  # warm-up
    t = time.perf_counter()
    fit_gbdt(X, y, n_trees=200, max_depth=6, learning_rate=0.05)
    return time.perf_counter() - t


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=5000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fit-only", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.fit_only:
        print(json.dumps({"fit": fit_time(args.rows)}))
        return

    print(f"rows={args.rows}  (best of {args.repeat})")
    for name, t in kernel_times(args.rows, args.repeat).items():
        print(f"{name:16s} numba {t['numba'] * 1e3:9.2f} ms   numpy {t['numpy'] * 1e3:9.2f} ms   x{t['numpy'] / t['numba']:.1f}")
    fits = {}
    for flag in ("1", "0"):
        env = dict(os.environ, RETMATCH_NUMBA=flag)
        res = subprocess.run(
            [sys.executable, __file__, "--fit-only", "--rows", str(args.rows)],
            env=env, capture_output=True, text=True, check=True,
        )
        fits[flag] = json.loads(res.stdout)["fit"]
    print(f"{'fit 200 trees':16s} numba {fits['1']:9.2f} s    numpy {fits['0']:9.2f} s    x{fits['0'] / fits['1']:.1f}")


if __name__ == "__main__":
    main()
