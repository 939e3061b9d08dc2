"""Throughput comparison of the compiled and pure-numpy sweep kernels.

Times one full bottom-up pass (values, residuals, telescoped rhs, masked
sums) over synthetic level arrays for a range of problem sizes, using both
backends on identical inputs, and prints per-size speedups.

Run from the repository root::

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 12 16 20 --repeats 9
"""

import argparse
import time

import numpy as np

from residual_solve.engine import _kernels_py

try:
    from residual_solve.engine import _kernels_c
except ImportError:
    _kernels_c = None


def make_levels(n: int, rng: np.random.Generator):
    """Random per-level arrays shaped like a real instance's, ~30% infeasible."""
    feas, r0, r1, vals = [], [None], [None], []
    for k in range(n + 1):
        m = 1 << (n - k)
        f = rng.random(m) > 0.3
        if k == n:
            f[:] = True  # root always feasible
        feas.append(f)
        v = rng.normal(size=m)
        v[~f] = np.nan
        vals.append(v)
        if k > 0:
            r0.append(rng.normal(size=m))
            r1.append(rng.normal(size=m))
    # a feasible key needs a feasible child, as LevelSystem guarantees
    for k in range(1, n + 1):
        feas[k] &= feas[k - 1][0::2] | feas[k - 1][1::2]
        vals[k][~feas[k]] = np.nan
    return feas, r0, r1, vals


def one_pass(kern, feas, r0, r1, vals, n: int) -> float:
    total = 0.0
    prev = vals[0]
    rhs = np.abs(vals[0])
    for k in range(1, n + 1):
        swept = kern.sweep_values(prev, feas[k - 1], r0[k], r1[k], feas[k])
        dabs = kern.sweep_delta_abs(vals[k], prev, feas[k - 1], r0[k], r1[k], feas[k])
        rhs = kern.sweep_rhs(rhs, dabs, feas[k - 1], feas[k])
        total += kern.masked_sum(dabs, feas[k])
        prev = swept
    return total


def bench(kern, args, n: int) -> float:
    rng = np.random.default_rng(args.seed)
    feas, r0, r1, vals = make_levels(n, rng)
    one_pass(kern, feas, r0, r1, vals, n)  # warm up, and touch the caches
    best = float("inf")
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        one_pass(kern, feas, r0, r1, vals, n)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[8, 12, 16, 20])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if _kernels_c is None:
        print("compiled backend not built; run pip install -e . first")
        return 1

    print(f"{'n':>4} {'keys':>9} {'numpy':>10} {'cython':>10} {'speedup':>8}")
    for n in args.sizes:
        t_py = bench(_kernels_py, args, n)
        t_c = bench(_kernels_c, args, n)
        keys = (1 << (n + 1)) - 1
        print(
            f"{n:>4} {keys:>9} {t_py * 1e3:>9.3f}m {t_c * 1e3:>9.3f}m "
            f"{t_py / t_c:>7.2f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
