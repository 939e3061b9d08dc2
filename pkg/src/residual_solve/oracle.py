"""Exact oracles: brute force, optimal tables, and problem-specific DPs.

Everything here is ground truth for the rest of the package:

* ``brute_force_root`` enumerates full assignments and never touches the
  transition structure — it is the independent check on the recursion;
* ``build_table`` runs the Bellman sweep over all levels and returns an
  ``OracleTable`` (optimal value of every feasible key, plus the argmax
  branch used for optimal decoding);
* ``dp_knapsack_integer`` is the classic capacity-indexed knapsack DP,
  a second independent route to the knapsack optimum;
* the independent-set section implements the node-subset refinement
  recursion (remove the highest node, or pick it and remove its closed
  neighborhood) and the path-count coefficients of its memoized DAG, which
  appear in the subset-summed deviation bound for arbitrary value maps.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import engine
from .core import (
    TABLE_GUARD,
    GuardExceededError,
    InfeasibleError,
    SubInstanceKey,
    key_from_suffix,
    root_key,
    suffix_to_bits,
)

__all__ = [
    "BRUTE_FORCE_GUARD",
    "ALPHA_GUARD",
    "ALPHA_TREE_GUARD",
    "brute_force_root",
    "optimal_root",
    "OracleTable",
    "build_table",
    "dp_knapsack_integer",
    "mwis_value_recursive",
    "alpha_coefficients",
    "alpha_tree_counts",
    "subset_children",
]

BRUTE_FORCE_GUARD = 24
ALPHA_GUARD = 16
ALPHA_TREE_GUARD = 8


def brute_force_root(instance) -> float:
    """Maximum of ``terminal_value`` over all feasible full assignments.

    Pure enumeration: independent of ``transitions`` and of the engine.
    Raises ``InfeasibleError`` when no assignment is feasible.
    """
    n = instance.n
    if n > BRUTE_FORCE_GUARD:
        raise GuardExceededError(
            f"brute force requires n <= {BRUTE_FORCE_GUARD}, got n = {n}"
        )
    best = None
    for s in range(1 << n):
        x = suffix_to_bits(s, n)
        if instance.feasible_assignment(x):
            v = instance.terminal_value(x)
            if best is None or v > best:
                best = v
    if best is None:
        raise InfeasibleError("instance has no feasible assignment")
    return best


def optimal_root(instance) -> float:
    """Optimal root value via the level sweep (fast path; equals brute force)."""
    ls = engine.build_levels(instance)
    if not ls.root_feasible:
        raise InfeasibleError("instance has no feasible assignment")
    return engine.root_value(engine.optimal_levels(ls))


class OracleTable:
    """Optimal value of every feasible sub-instance of one instance.

    Lookup by key; ``argmax_bit`` gives the optimal branch at levels >= 1
    (ties broken toward the 0-branch).  Usable anywhere a value source is
    expected.
    """

    def __init__(self, instance, ls: engine.LevelSystem, levels: list[np.ndarray]):
        self.instance = instance
        self._ls = ls
        self.levels = levels

    def _slot(self, key: SubInstanceKey) -> tuple[int, int]:
        if key.n != self.instance.n:
            raise ValueError("key dimension does not match instance")
        return key.k, key.suffix

    def __getitem__(self, key: SubInstanceKey) -> float:
        k, s = self._slot(key)
        v = self.levels[k][s]
        if np.isnan(v):
            raise InfeasibleError(f"no optimal value at infeasible key {key}")
        return float(v)

    def __contains__(self, key: SubInstanceKey) -> bool:
        k, s = self._slot(key)
        return bool(self._ls.feas[k][s])

    def value(self, instance, key: SubInstanceKey) -> float:
        if instance is not self.instance and instance != self.instance:
            raise ValueError("oracle table is bound to a different instance")
        return self[key]

    def level_values(self, instance) -> list[np.ndarray]:
        if instance is not self.instance and instance != self.instance:
            raise ValueError("oracle table is bound to a different instance")
        return [a.copy() for a in self.levels]

    @property
    def root_value(self) -> float:
        return self[root_key(self.instance.n)]

    def argmax_bit(self, key: SubInstanceKey) -> int:
        """Optimal branch bit at a feasible key with k >= 1 (0 on ties)."""
        k, s = self._slot(key)
        if k < 1:
            raise ValueError("argmax is defined for levels k >= 1")
        if not self._ls.feas[k][s]:
            raise InfeasibleError(f"argmax requested at infeasible key {key}")
        f = self._ls.feas[k - 1]
        c0 = self._ls.r0[k][s] + self.levels[k - 1][2 * s] if f[2 * s] else None
        c1 = self._ls.r1[k][s] + self.levels[k - 1][2 * s + 1] if f[2 * s + 1] else None
        if c1 is None:
            return 0
        if c0 is None:
            return 1
        return 0 if c0 >= c1 else 1

    def feasible_count(self) -> int:
        return int(sum(int(f.sum()) for f in self._ls.feas))

    def to_json_dict(self) -> dict:
        """Flat listing of all feasible keys and their optimal values."""
        n = self.instance.n
        entries = []
        for k in range(n + 1):
            for s in np.flatnonzero(self._ls.feas[k]):
                key = key_from_suffix(n, k, int(s))
                entries.append(
                    {
                        "k": k,
                        "xi": "".join(str(b) for b in key.xi),
                        "value": float(self.levels[k][s]),
                    }
                )
        return {"family": self.instance.family, "n": n, "entries": entries}


def build_table(instance) -> OracleTable:
    """Optimal table over every level (guarded by the enumeration limit)."""
    if instance.n > TABLE_GUARD:
        raise GuardExceededError(
            f"oracle table requires n <= {TABLE_GUARD}, got n = {instance.n}"
        )
    ls = engine.build_levels(instance)
    if not ls.root_feasible:
        raise InfeasibleError("instance has no feasible assignment")
    return OracleTable(instance, ls, engine.optimal_levels(ls))


def dp_knapsack_integer(c: Sequence[float], a: Sequence[float], b: float) -> float:
    """Capacity-indexed 0/1 knapsack DP; requires integral sizes and capacity.

    Independent of the sub-instance machinery.  Negative capacity yields an
    infeasibility error; sizes must be non-negative integers.
    """
    a_int = [int(v) for v in a]
    if any(ai != av for ai, av in zip(a_int, a)) or float(b) != int(b):
        raise ValueError("integer DP requires integral sizes and capacity")
    if any(ai < 0 for ai in a_int):
        raise ValueError("integer DP requires non-negative sizes")
    cap = int(b)
    if cap < 0:
        raise InfeasibleError("negative capacity")
    best = np.zeros(cap + 1)
    for cj, aj in zip(c, a_int):
        if aj <= cap:
            shifted = best[: cap + 1 - aj] + cj
            best[aj:] = np.maximum(best[aj:], shifted)
    return float(best[cap])


# ---------------------------------------------------------------------------
# Independent set: structural recursion and refinement-DAG coefficients
# ---------------------------------------------------------------------------


def _neighbor_masks(n: int, edges: Sequence[tuple[int, int]]) -> list[int]:
    masks = [0] * (n + 1)
    for i, j in edges:
        masks[i] |= 1 << (j - 1)
        masks[j] |= 1 << (i - 1)
    return masks


def subset_children(nodes: tuple[int, ...], adj: Sequence[int]) -> tuple[tuple[int, ...], tuple[int, ...], int]:
    """Children of a node subset under the refinement recursion.

    Splitting on the highest node ``i``: either drop ``i`` (0-branch) or
    pick it and drop its closed neighborhood (1-branch).  Returns
    ``(drop_child, pick_child, i)`` with children as sorted node tuples.
    """
    if not nodes:
        raise ValueError("the empty subset has no children")
    i = nodes[-1]
    drop = nodes[:-1]
    closed = adj[i] | (1 << (i - 1))
    pick = tuple(v for v in nodes if not (closed >> (v - 1)) & 1)
    return drop, pick, i


def mwis_value_recursive(instance, nodes: tuple[int, ...] | None = None) -> float:
    """Optimal set weight of an induced subgraph via the structural recursion.

    ``value(H) = max(value(H minus i), w_i + value(H minus closed
    neighborhood of i))`` with ``i`` the highest node of ``H``.  Memoized on
    node subsets; independent of the suffix-fixing machinery.
    """
    adj = _neighbor_masks(instance.n, instance.edges)
    w = instance.w
    memo: dict[tuple[int, ...], float] = {(): 0.0}

    def rec(h: tuple[int, ...]) -> float:
        if h in memo:
            return memo[h]
        drop, pick, i = subset_children(h, adj)
        v = max(rec(drop), w[i - 1] + rec(pick))
        memo[h] = v
        return v

    if nodes is None:
        nodes = tuple(range(1, instance.n + 1))
    return rec(tuple(sorted(nodes)))


def alpha_coefficients(instance) -> dict[tuple[int, ...], int]:
    """Number of refinement-DAG paths from the full node set to each subset.

    The recursion tree from the full set, with both children of every
    nonempty subset expanded and shared subsets merged, is a DAG; the
    coefficient of a subset is the number of distinct root-to-subset paths.
    These weights turn per-subset residuals into a deviation bound for
    arbitrary value maps on subsets.  The root has coefficient 1.
    """
    n = instance.n
    if n > ALPHA_GUARD:
        raise GuardExceededError(
            f"alpha coefficients require n <= {ALPHA_GUARD}, got n = {n}"
        )
    adj = _neighbor_masks(n, instance.edges)
    full = tuple(range(1, n + 1))
    reach = {full}
    stack = [full]
    while stack:
        h = stack.pop()
        if h:
            drop, pick, _ = subset_children(h, adj)
            for child in (drop, pick):
                if child not in reach:
                    reach.add(child)
                    stack.append(child)
    # Both children of a subset are strictly smaller, so descending size is
    # a topological order of the DAG.
    counts: dict[tuple[int, ...], int] = {full: 1}
    for h in sorted(reach, key=len, reverse=True):
        if not h:
            continue
        drop, pick, _ = subset_children(h, adj)
        for child in (drop, pick):
            counts[child] = counts.get(child, 0) + counts[h]
    return counts


def alpha_tree_counts(instance) -> dict[tuple[int, ...], int]:
    """Subset multiplicities of the *unmemoized* recursion tree.

    Test oracle only: expands the full recursion tree (exponential) and
    counts how many tree nodes carry each subset, which must equal the DAG
    path counts of ``alpha_coefficients``.
    """
    n = instance.n
    if n > ALPHA_TREE_GUARD:
        raise GuardExceededError(
            f"tree expansion requires n <= {ALPHA_TREE_GUARD}, got n = {n}"
        )
    adj = _neighbor_masks(n, instance.edges)
    counts: dict[tuple[int, ...], int] = {}

    def visit(h: tuple[int, ...]):
        counts[h] = counts.get(h, 0) + 1
        if h:
            drop, pick, _ = subset_children(h, adj)
            visit(drop)
            visit(pick)

    visit(tuple(range(1, n + 1)))
    return counts
