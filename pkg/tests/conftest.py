"""Shared fixtures and an independent reference oracle.

The reference implementations here deliberately avoid the package's own
transition / level-system machinery: values are computed straight from the
raw instance data by enumerating completions.  Tests that compare package
output against these functions are therefore end-to-end checks, not
self-agreement.
"""

from __future__ import annotations

import numpy as np
import pytest

from residual_solve import problems
from residual_solve.core import SubInstanceKey

FAMILIES = [
    "knapsack_guarded",
    "knapsack_artificial",
    "knapsack_penalty",
    "max_cut",
    "max_sat",
    "mwis",
    "black_box",
]

ZERO_REWARD_FAMILIES = ["knapsack_penalty", "max_sat", "mwis", "black_box"]


# ---------------------------------------------------------------------------
# Reference terminal objectives, straight from raw fields
# ---------------------------------------------------------------------------


def ref_terminal(inst, x) -> float | None:
    """Objective of a full assignment, or None if excluded from the domain."""
    x = tuple(int(b) for b in x)
    fam = inst.family
    if fam == "knapsack_guarded":
        if sum(a * b for a, b in zip(inst.a, x)) > inst.b:
            return None
        return sum(c * b for c, b in zip(inst.c, x))
    if fam == "knapsack_artificial":
        c = list(inst.c) + [-sum(inst.c)]
        a = list(inst.a) + [-sum(inst.a)]
        if sum(ai * b for ai, b in zip(a, x)) > inst.b:
            return None
        return sum(ci * b for ci, b in zip(c, x))
    if fam == "knapsack_penalty":
        load = sum(a * b for a, b in zip(inst.a, x))
        return sum(c * b for c, b in zip(inst.c, x)) - sum(inst.c) * max(
            0.0, load - inst.b
        )
    if fam == "max_cut":
        r = inst.r
        return sum(
            r[i][j] * x[i] * (1 - x[j])
            for i in range(inst.n)
            for j in range(inst.n)
        )
    if fam == "max_sat":
        total = 0.0
        for w, cl in zip(inst.coeffs, inst.clauses):
            if any((x[l - 1] if l > 0 else 1 - x[-l - 1]) for l in cl):
                total += w
        return total
    if fam == "mwis":
        if any(x[i - 1] and x[j - 1] for i, j in inst.edges):
            return None
        return sum(w * b for w, b in zip(inst.w, x))
    if fam == "black_box":
        idx = sum(b << i for i, b in enumerate(x))
        return float(inst.values[idx])
    raise AssertionError(f"unknown family {fam}")


def ref_fixed_offset(inst, key: SubInstanceKey) -> float:
    """Reward already collected on the path from the root to ``key``."""
    k, xi = key.k, key.xi
    fam = inst.family
    if fam == "knapsack_guarded":
        return sum(inst.c[j] * xi[j] for j in range(k, inst.n))
    if fam == "knapsack_artificial":
        c = list(inst.c) + [-sum(inst.c)]
        return sum(c[j] * xi[j] for j in range(k, inst.n))
    if fam == "max_cut":
        r = inst.r
        return sum(
            r[i][j] * xi[i] * (1 - xi[j])
            for i in range(k, inst.n)
            for j in range(k, inst.n)
        )
    return 0.0


def reference_optimal_value(inst, key: SubInstanceKey) -> float | None:
    """V*(key) by brute enumeration of the free prefix; None if infeasible."""
    k, xi = key.k, key.xi
    best = None
    for p in range(1 << k):
        x = tuple((p >> j) & 1 for j in range(k)) + xi[k:]
        t = ref_terminal(inst, x)
        if t is not None and (best is None or t > best):
            best = t
    if best is None:
        return None
    return best - ref_fixed_offset(inst, key)


# ---------------------------------------------------------------------------
# Instance factories
# ---------------------------------------------------------------------------


def make_instances(family: str, n: int, count: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return problems.generate(family, {"n": n}, rng, count)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def tiny_knapsack() -> problems.KnapsackGuarded:
    """3-item instance small enough to reason about by hand."""
    return problems.KnapsackGuarded(c=(3.0, 2.0, 4.0), a=(2.0, 1.0, 3.0), b=4.0)


def tiny_maxcut() -> problems.MaxCut:
    return problems.MaxCut(r=((0.0, 1.0), (0.0, 0.0)))
