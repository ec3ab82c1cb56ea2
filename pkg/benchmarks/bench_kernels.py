"""Compiled vs pure-Python kernels on realistic inputs.

    python3 benchmarks/bench_kernels.py [--n 257] [--repeat 3]

Prints the best wall time per kernel and backend, the speedup, and whether
both backends returned identical results.
"""
import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import cos_pair  # noqa: E402
from pbrigidity import _kernels  # noqa: E402
from pbrigidity.phi_analysis import _corners, _square_keys, cell_centers  # noqa: E402


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=257, help="grid nodes per axis")
    ap.add_argument("--value-grid", type=int, default=256)
    ap.add_argument("--level", type=int, default=16, help="value squares per axis")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if _kernels.compiled_backend is None:
        sys.exit("compiled backend not built; run `pip install -e . --no-build-isolation`")

    F, G = cos_pair(args.n)
    fc, gc = _corners(F, G)
    fq = np.ascontiguousarray(fc.reshape(4, -1).T)
    gq = np.ascontiguousarray(gc.reshape(4, -1).T)
    u0, v0 = fq.min(), gq.min()
    nv = args.value_grid
    du, dv = (fq.max() - u0) / nv, (gq.max() - v0) / nv
    count_args = (fq, gq, u0, du, nv, v0, dv, nv, 0.5)

    cf, cg = cell_centers(F, G)
    member = np.ones(cf.shape, dtype=bool)
    keys = np.ascontiguousarray(_square_keys(cf, cg, args.level, member)[0], dtype=np.int64)

    cases = [
        ("count_preimages", lambda b: b.count_preimages(*count_args)),
        ("label_equal_keys", lambda b: b.label_equal_keys(keys, False, False)),
    ]
    print(f"grid {args.n}x{args.n}, {len(fq)} cells, value grid {nv}x{nv}, best of {args.repeat}")
    print(f"{'kernel':<18}{'cython s':>12}{'python s':>12}{'speedup':>10}  identical")
    for name, call in cases:
        tc, rc = best_of(lambda: call(_kernels.compiled_backend), args.repeat)
        tp, rpy = best_of(lambda: call(_kernels.python_backend), args.repeat)
        print(f"{name:<18}{tc:>12.4f}{tp:>12.4f}{tp / tc:>9.1f}x  {same(rc, rpy)}")


if __name__ == "__main__":
    main()
