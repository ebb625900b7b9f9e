"""Compiled vs NumPy logistic kernels on mini-batches of a sparse dataset.

    python3 benchmarks/bench_kernels.py [--n 20000] [--d 300] [--batch 16 128 1024]
"""

import argparse
import timeit

import numpy as np

from localsgd import _kernels_py
from localsgd.data import make_sparse_binary

try:
    from localsgd import _kernels
except ImportError:
    _kernels = None


def bench(mod, ds, batch, w, reps):
    out = np.zeros(ds.d)
    args = (ds.indptr, ds.indices, ds.data, ds.labels, batch)
    grad = timeit.repeat(lambda: mod.logistic_grad_sum(*args, w, out), number=reps, repeat=5)
    loss = timeit.repeat(lambda: mod.logistic_loss_sum(*args, w), number=reps, repeat=5)
    return min(grad) / reps, min(loss) / reps


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--d", type=int, default=300)
    p.add_argument("--density", type=float, default=0.04)
    p.add_argument("--batch", type=int, nargs="+", default=[16, 128, 1024])
    p.add_argument("--reps", type=int, default=200)
    args = p.parse_args()

    ds = make_sparse_binary(n=args.n, d=args.d, density=args.density, seed=0)
    rng = np.random.default_rng(0)
    w = rng.standard_normal(ds.d) * 0.1
    mods = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels is not None else [])
    if _kernels is None:
        print("compiled extension not built; timing the NumPy fallback only")

    print(f"{'batch':>6} {'backend':>8} {'grad us':>10} {'loss us':>10} {'speedup':>8}")
    for b in args.batch:
        batch = rng.choice(ds.N, size=min(b, ds.N), replace=False).astype(np.int64)
        base = None
        for name, mod in mods:
            g, l = bench(mod, ds, batch, w, args.reps)
            base = base or g
            print(f"{b:>6} {name:>8} {g * 1e6:>10.1f} {l * 1e6:>10.1f} {base / g:>7.1f}x")


if __name__ == "__main__":
    main()
