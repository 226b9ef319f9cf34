"""Compare the compiled kernels against the numpy reference.

Usage: python benchmarks/bench_kernels.py [--batch 240] [--map-dim 128]
       [--dim 64] [--templates 80] [--repeats 200]

Times one call of each kernel at training-loop sizes (defaults match the
standard batch: 240 instances, 80 templates) and prints per-call
microseconds for both backends.
"""

import argparse
import timeit

import numpy as np

from cfan import _kernels_py

try:
    from cfan import _kernels_c
except ImportError:
    _kernels_c = None


def make_cases(n, m, d, t, rng):
    X = rng.standard_normal((n, m))
    gamma = rng.standard_normal(m) * 0.1 + 1.0
    beta = rng.standard_normal(m) * 0.1
    dY = rng.standard_normal((n, m))
    Q = rng.standard_normal((3, d))
    F = rng.standard_normal((3, d))
    dR = rng.standard_normal(d)
    W = _kernels_py.softmax_columns(Q)
    reps = rng.standard_normal((t, d))
    P = rng.standard_normal((50, d))
    G = rng.standard_normal((40, d))
    mean = X.mean(axis=0)
    var = X.var(axis=0)
    _, xhat, inv_std, _, _ = _kernels_py.bn_forward(X, gamma, beta, 1e-5)
    return {
        "bn_forward": (X, gamma, beta, 1e-5),
        "bn_forward_frozen": (X, gamma, beta, mean, var, 1e-5),
        "bn_backward": (dY, xhat, inv_std, gamma),
        "softmax_columns": (Q,),
        "softmax_pool_backward": (dR, W, F),
        "sq_dist_matrix": (reps,),
        "cosine_matrix": (P, G),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=240)
    ap.add_argument("--map-dim", type=int, default=128)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--templates", type=int, default=80)
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(args.batch, args.map_dim, args.dim, args.templates, rng)
    if _kernels_c is None:
        print("compiled backend not built; timing numpy only")

    print(f"{'kernel':<24}{'numpy us':>12}{'compiled us':>14}{'speedup':>10}")
    for name, arglist in cases.items():
        py_fn = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py_fn(*arglist), number=args.repeats, repeat=3))
        t_py_us = t_py / args.repeats * 1e6
        if _kernels_c is None:
            print(f"{name:<24}{t_py_us:>12.1f}{'-':>14}{'-':>10}")
            continue
        c_fn = getattr(_kernels_c, name)
        t_c = min(timeit.repeat(lambda: c_fn(*arglist), number=args.repeats, repeat=3))
        t_c_us = t_c / args.repeats * 1e6
        print(f"{name:<24}{t_py_us:>12.1f}{t_c_us:>14.1f}{t_py / t_c:>10.2f}")


if __name__ == "__main__":
    main()
