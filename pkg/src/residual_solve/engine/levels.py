"""Dense per-level arrays over the sub-instance tree of one problem.

At level ``k`` the ``2^(n-k)`` sub-instance keys are indexed by their fixed
suffix packed into an integer ``s`` (position ``k+1`` is the low bit).  The
two children of key ``s`` at level ``k`` sit at ``2s`` (variable ``k`` fixed
to 0) and ``2s + 1`` (fixed to 1) at level ``k - 1`` — this is what makes
whole-level sweeps a couple of strided array operations.

``LevelSystem`` packages, per level: key feasibility, the branch rewards of
fixing the level's variable, and at level 0 the base values (the pinned
entries of every value table).  Entries at infeasible keys are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = ["LevelSystem", "assignment_sums", "suffix_dot"]


@dataclass
class LevelSystem:
    """Per-level arrays of one instance; see the module docstring."""

    n: int
    base: np.ndarray  # level 0, shape (2^n,), NaN at infeasible assignments
    feas: list  # feas[k]: bool array, shape (2^(n-k),)
    r0: list  # r0[k]: 0-branch rewards at level k (index 0 unused)
    r1: list  # r1[k]: 1-branch rewards at level k (index 0 unused)

    def __post_init__(self):
        n = self.n
        if len(self.feas) != n + 1 or len(self.r0) != n + 1 or len(self.r1) != n + 1:
            raise ValueError("need n + 1 per-level entries")
        if self.base.shape != (1 << n,):
            raise ValueError(f"base has shape {self.base.shape}, expected (2^{n},)")
        for k in range(n + 1):
            if self.feas[k].shape != (1 << (n - k),):
                raise ValueError(f"feas[{k}] has wrong shape")
        # A feasible key must have at least one feasible branch.
        for k in range(1, n + 1):
            f0 = self.feas[k - 1][0::2]
            f1 = self.feas[k - 1][1::2]
            if np.any(self.feas[k] & ~(f0 | f1)):
                raise ValueError(f"feasible key with no feasible child at level {k}")

    @property
    def root_feasible(self) -> bool:
        return bool(self.feas[self.n][0])


def assignment_sums(coeffs: Sequence[float]) -> np.ndarray:
    """``out[s] = sum of coeffs[j] over set bits j of s`` for all s < 2^n.

    Built by doubling: variable ``j+1`` is bit ``j``, so appending one
    variable concatenates the array with a shifted copy.
    """
    out = np.zeros(1)
    for cj in coeffs:
        out = np.concatenate([out, out + float(cj)])
    return out


def suffix_dot(m: int, vec: np.ndarray) -> np.ndarray:
    """``out[s] = sum of vec[t] over set bits t of s`` for all s < 2^m.

    Same quantity as ``assignment_sums`` but for an m-bit suffix block;
    kept separate so reward construction reads naturally.
    """
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (m,):
        raise ValueError(f"vector has shape {vec.shape}, expected ({m},)")
    return assignment_sums(vec)
