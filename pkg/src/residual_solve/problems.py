"""Problem families, instance generators, and instance serialization.

Every family exposes the same structural interface over n binary variables
(see ``core.Instance``):

* ``terminal_value(x)``   – objective of a full assignment,
* ``base_value(xi)``      – value of the level-0 sub-instance (the value a
  pinned table stores at ``k = 0``; equal to ``terminal_value`` for
  reward-free families, and ``0`` for families whose objective is paid out
  as per-step rewards),
* ``transitions(key)``    – the feasible branches of fixing variable ``k``,
  each with its immediate reward (infeasible branches are never emitted),
* ``feasible_key`` / ``feasible_assignment`` – sub-instance / assignment
  feasibility,
* ``value_scale()``       – a positive magnitude used to scale model outputs,
* ``level_system()``      – dense per-level arrays for the vectorized engine.

The invariant tying these together: composing rewards along the unique path
from any key down to a full assignment and adding the level-0 base value
reproduces ``terminal_value`` of that assignment.

Reward conventions per family:

* guarded / artificial knapsack: reward ``c_k`` on the 1-branch, which is
  emitted only when the item still fits the residual capacity;
* max-cut: fixing ``x_k`` pays the cut contribution of every arc between
  variable ``k`` and the already-fixed variables — ``sum of R[j,k] over
  fixed j with xi_j = 1`` on the 0-branch and ``sum of R[k,j] over fixed j
  with xi_j = 0`` on the 1-branch (for symmetric ``R`` both reduce to the
  familiar one-row form; the transposed entry on the 0-branch is what makes
  the decomposition exact for directed matrices);
* max-sat, independent set, penalty knapsack, black box: rewards are zero
  and the whole objective sits in the level-0 base value.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    Bits,
    InfeasibleError,
    SubInstanceKey,
    TransitionOutcome,
    as_bits,
    bits_to_suffix,
)
from .engine.levels import LevelSystem, assignment_sums, suffix_dot

__all__ = [
    "KnapsackGuarded",
    "KnapsackArtificial",
    "KnapsackPenalty",
    "MaxSat",
    "Mwis",
    "MaxCut",
    "BlackBox",
    "FAMILIES",
    "KnapsackParams",
    "MaxSatParams",
    "MwisParams",
    "MaxCutParams",
    "BlackBoxParams",
    "PARAM_TYPES",
    "make_params",
    "generate",
    "instance_from_json",
    "read_instances",
    "write_instances",
    "write_csv",
]

_SCALE_FLOOR = 1e-9


def _check_key(key: SubInstanceKey, n: int) -> None:
    if key.n != n:
        raise ValueError(f"key has {key.n} variables, instance has {n}")
    if not 1 <= key.k <= n:
        raise ValueError(f"transitions are defined for 1 <= k <= n, got k={key.k}")


def _child(key: SubInstanceKey, bit: int) -> SubInstanceKey:
    k = key.k
    if bit == 0:
        return SubInstanceKey(k - 1, key.xi)
    xi = list(key.xi)
    xi[k - 1] = 1
    return SubInstanceKey(k - 1, tuple(xi))


def _as_float_tuple(values: Iterable[float]) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


# ---------------------------------------------------------------------------
# Knapsack (guarded transitions)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnapsackGuarded:
    """0/1 knapsack where the 1-branch is emitted only if the item fits.

    Objective ``sum c_j x_j`` subject to ``sum a_j x_j <= b``.  The reward
    ``c_j`` is paid when ``x_j`` is fixed to 1, so the level-0 base value
    is 0.  A key is feasible when its fixed suffix (plus the best case of
    any negative-size free items) still fits the capacity.
    """

    c: tuple[float, ...]
    a: tuple[float, ...]
    b: float
    weight: float = 1.0
    family = "knapsack_guarded"

    def __post_init__(self):
        object.__setattr__(self, "c", _as_float_tuple(self.c))
        object.__setattr__(self, "a", _as_float_tuple(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "weight", float(self.weight))
        if len(self.c) != len(self.a) or not self.c:
            raise ValueError("c and a must be equal-length and non-empty")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    @property
    def n(self) -> int:
        return len(self.c)

    @cached_property
    def _neg_prefix(self) -> tuple[float, ...]:
        """neg_prefix[k] = sum of negative sizes among free items 1..k."""
        out = [0.0]
        for aj in self.a:
            out.append(out[-1] + min(aj, 0.0))
        return tuple(out)

    def _suffix_load(self, key: SubInstanceKey) -> float:
        return sum(self.a[j] for j in range(key.k, self.n) if key.xi[j])

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return self._suffix_load(key) + self._neg_prefix[key.k] <= self.b

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        bits = as_bits(x, self.n)
        return sum(self.a[j] for j in range(self.n) if bits[j]) <= self.b

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = as_bits(x, self.n)
        if not self.feasible_assignment(bits):
            raise InfeasibleError(f"assignment exceeds capacity {self.b}")
        return sum(self.c[j] for j in range(self.n) if bits[j])

    def base_value(self, xi: Sequence[int]) -> float:
        bits = as_bits(xi, self.n)
        if not self.feasible_assignment(bits):
            raise InfeasibleError(f"assignment exceeds capacity {self.b}")
        return 0.0

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        k = key.k
        load = self._suffix_load(key)
        guard = self.b - self._neg_prefix[k - 1]
        outs = []
        if load <= guard:
            outs.append(TransitionOutcome(0, _child(key, 0), 0.0))
        if load + self.a[k - 1] <= guard:
            outs.append(TransitionOutcome(1, _child(key, 1), self.c[k - 1]))
        if not outs:
            raise InfeasibleError(f"no feasible branch at {key}")
        return outs

    def value_scale(self) -> float:
        return max(sum(abs(v) for v in self.c), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        return _knapsack_levels(self.n, self.c, self.a, self.b)

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "c": list(self.c),
            "a": list(self.a),
            "b": self.b,
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "KnapsackGuarded":
        return cls(c=d["c"], a=d["a"], b=d["b"], weight=d.get("weight", 1.0))


def _knapsack_levels(
    n: int, c: Sequence[float], a: Sequence[float], b: float
) -> LevelSystem:
    a_arr = np.asarray(a, dtype=float)
    neg_prefix = np.concatenate([[0.0], np.cumsum(np.minimum(a_arr, 0.0))])
    loads: list[np.ndarray] = [np.empty(0)] * (n + 1)
    loads[n] = np.zeros(1)
    for k in range(n, 0, -1):
        cur = np.empty(loads[k].size * 2)
        cur[0::2] = loads[k]
        cur[1::2] = loads[k] + a_arr[k - 1]
        loads[k - 1] = cur
    feas = [loads[k] + neg_prefix[k] <= b for k in range(n + 1)]
    r0 = [None] + [np.zeros(1 << (n - k)) for k in range(1, n + 1)]
    r1 = [None] + [np.full(1 << (n - k), float(c[k - 1])) for k in range(1, n + 1)]
    base = np.zeros(1 << n)
    base[~feas[0]] = np.nan
    return LevelSystem(n=n, base=base, feas=feas, r0=r0, r1=r1)


@dataclass(frozen=True)
class KnapsackArtificial:
    """Knapsack reformulated with an artificial escape variable.

    The payload is the same ``(c, a, b)`` as the guarded family, but the
    problem has ``len(c) + 1`` variables: the extra last variable carries
    profit ``-sum(c)`` and size ``-sum(a)``, so switching it on relaxes the
    capacity enough for any assignment while wiping out all profit.  The
    optimum over the extended problem equals the guarded optimum whenever
    ``b >= 0`` and profits are non-negative.

    The extra variable sits at the *last* position, i.e. it is fixed first
    during refinement.  A key is feasible when the fixed suffix load plus
    the most optimistic completion (escape variable on, if still free) fits.
    """

    c: tuple[float, ...]
    a: tuple[float, ...]
    b: float
    weight: float = 1.0
    family = "knapsack_artificial"

    def __post_init__(self):
        object.__setattr__(self, "c", _as_float_tuple(self.c))
        object.__setattr__(self, "a", _as_float_tuple(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "weight", float(self.weight))
        if len(self.c) != len(self.a) or not self.c:
            raise ValueError("c and a must be equal-length and non-empty")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    @property
    def n(self) -> int:
        return len(self.c) + 1

    @cached_property
    def _ext(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        c_ext = self.c + (-float(sum(self.c)),)
        a_ext = self.a + (-float(sum(self.a)),)
        return c_ext, a_ext

    @cached_property
    def _neg_prefix(self) -> tuple[float, ...]:
        _, a_ext = self._ext
        out = [0.0]
        for aj in a_ext:
            out.append(out[-1] + min(aj, 0.0))
        return tuple(out)

    def _suffix_load(self, key: SubInstanceKey) -> float:
        _, a_ext = self._ext
        return sum(a_ext[j] for j in range(key.k, self.n) if key.xi[j])

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return self._suffix_load(key) + self._neg_prefix[key.k] <= self.b

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        bits = as_bits(x, self.n)
        _, a_ext = self._ext
        return sum(a_ext[j] for j in range(self.n) if bits[j]) <= self.b

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = as_bits(x, self.n)
        if not self.feasible_assignment(bits):
            raise InfeasibleError(f"assignment exceeds capacity {self.b}")
        c_ext, _ = self._ext
        return sum(c_ext[j] for j in range(self.n) if bits[j])

    def base_value(self, xi: Sequence[int]) -> float:
        bits = as_bits(xi, self.n)
        if not self.feasible_assignment(bits):
            raise InfeasibleError(f"assignment exceeds capacity {self.b}")
        return 0.0

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        c_ext, a_ext = self._ext
        k = key.k
        load = self._suffix_load(key)
        guard = self.b - self._neg_prefix[k - 1]
        outs = []
        if load <= guard:
            outs.append(TransitionOutcome(0, _child(key, 0), 0.0))
        if load + a_ext[k - 1] <= guard:
            outs.append(TransitionOutcome(1, _child(key, 1), c_ext[k - 1]))
        if not outs:
            raise InfeasibleError(f"no feasible branch at {key}")
        return outs

    def value_scale(self) -> float:
        return max(sum(abs(v) for v in self.c), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        c_ext, a_ext = self._ext
        return _knapsack_levels(self.n, c_ext, a_ext, self.b)

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "c": list(self.c),
            "a": list(self.a),
            "b": self.b,
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "KnapsackArtificial":
        return cls(c=d["c"], a=d["a"], b=d["b"], weight=d.get("weight", 1.0))


@dataclass(frozen=True)
class KnapsackPenalty:
    """Unconstrained knapsack with capacity violation penalized in the objective.

    ``phi(x) = c.x - (sum c) * max(0, a.x - b)``.  Every assignment is
    feasible; both branches always exist and carry zero reward, so the whole
    objective sits in the level-0 base value.  For integral sizes,
    ``b >= 0`` and non-negative profits, the optimum coincides with the
    guarded formulation's.
    """

    c: tuple[float, ...]
    a: tuple[float, ...]
    b: float
    weight: float = 1.0
    family = "knapsack_penalty"

    def __post_init__(self):
        object.__setattr__(self, "c", _as_float_tuple(self.c))
        object.__setattr__(self, "a", _as_float_tuple(self.a))
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "weight", float(self.weight))
        if len(self.c) != len(self.a) or not self.c:
            raise ValueError("c and a must be equal-length and non-empty")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    @property
    def n(self) -> int:
        return len(self.c)

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return True

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        as_bits(x, self.n)
        return True

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = as_bits(x, self.n)
        profit = sum(self.c[j] for j in range(self.n) if bits[j])
        load = sum(self.a[j] for j in range(self.n) if bits[j])
        return profit - sum(self.c) * max(0.0, load - self.b)

    def base_value(self, xi: Sequence[int]) -> float:
        return self.terminal_value(xi)

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        return [
            TransitionOutcome(0, _child(key, 0), 0.0),
            TransitionOutcome(1, _child(key, 1), 0.0),
        ]

    def value_scale(self) -> float:
        return max(sum(abs(v) for v in self.c), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        n = self.n
        profits = assignment_sums(self.c)
        loads = assignment_sums(self.a)
        base = profits - sum(self.c) * np.maximum(0.0, loads - self.b)
        feas = [np.ones(1 << (n - k), dtype=bool) for k in range(n + 1)]
        zeros = [None] + [np.zeros(1 << (n - k)) for k in range(1, n + 1)]
        return LevelSystem(n=n, base=base, feas=feas, r0=zeros, r1=list(zeros))

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "c": list(self.c),
            "a": list(self.a),
            "b": self.b,
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "KnapsackPenalty":
        return cls(c=d["c"], a=d["a"], b=d["b"], weight=d.get("weight", 1.0))


# ---------------------------------------------------------------------------
# Weighted MAX-SAT
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxSat:
    """Weighted CNF MAX-SAT: maximize the total weight of satisfied clauses.

    Clauses are tuples of signed 1-based literals (DIMACS style): literal
    ``j`` means ``x_j = 1`` satisfies, ``-j`` means ``x_j = 0`` satisfies.
    """

    n: int
    clauses: tuple[tuple[int, ...], ...]
    coeffs: tuple[float, ...]
    weight: float = 1.0
    family = "max_sat"

    def __post_init__(self):
        object.__setattr__(
            self, "clauses", tuple(tuple(int(l) for l in cl) for cl in self.clauses)
        )
        object.__setattr__(self, "coeffs", _as_float_tuple(self.coeffs))
        object.__setattr__(self, "weight", float(self.weight))
        if self.n < 1:
            raise ValueError("n must be positive")
        if len(self.clauses) != len(self.coeffs):
            raise ValueError("one coefficient per clause required")
        for cl in self.clauses:
            if not cl:
                raise ValueError("empty clause")
            if any(l == 0 or abs(l) > self.n for l in cl):
                raise ValueError(f"literal out of range in clause {cl}")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return True

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        as_bits(x, self.n)
        return True

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = as_bits(x, self.n)
        total = 0.0
        for cl, w in zip(self.clauses, self.coeffs):
            if any(bits[l - 1] == 1 if l > 0 else bits[-l - 1] == 0 for l in cl):
                total += w
        return total

    def base_value(self, xi: Sequence[int]) -> float:
        return self.terminal_value(xi)

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        return [
            TransitionOutcome(0, _child(key, 0), 0.0),
            TransitionOutcome(1, _child(key, 1), 0.0),
        ]

    def value_scale(self) -> float:
        return max(sum(abs(w) for w in self.coeffs), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        n = self.n
        idx = np.arange(1 << n, dtype=np.int64)
        base = np.zeros(1 << n)
        for cl, w in zip(self.clauses, self.coeffs):
            pos = sum(1 << (l - 1) for l in cl if l > 0)
            neg = sum(1 << (-l - 1) for l in cl if l < 0)
            sat = ((idx & pos) != 0) | ((~idx & neg) != 0)
            base += w * sat
        feas = [np.ones(1 << (n - k), dtype=bool) for k in range(n + 1)]
        zeros = [None] + [np.zeros(1 << (n - k)) for k in range(1, n + 1)]
        return LevelSystem(n=n, base=base, feas=feas, r0=zeros, r1=list(zeros))

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "clauses": [list(cl) for cl in self.clauses],
            "coeffs": list(self.coeffs),
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MaxSat":
        return cls(
            n=d["n"],
            clauses=tuple(tuple(cl) for cl in d["clauses"]),
            coeffs=d["coeffs"],
            weight=d.get("weight", 1.0),
        )


# ---------------------------------------------------------------------------
# Maximum-weight independent set
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Mwis:
    """Maximum-weight independent set on an undirected graph.

    Variables pick nodes; an assignment is feasible when the picked set is
    independent.  A key is feasible when its fixed 1s are independent, and
    the 1-branch of variable ``k`` is emitted only when node ``k`` has no
    fixed neighbor already picked.  Rewards are zero: the base value of a
    full assignment is its total picked weight.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    w: tuple[float, ...]
    weight: float = 1.0
    family = "mwis"

    def __post_init__(self):
        norm = []
        seen = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (1 <= i <= self.n and 1 <= j <= self.n):
                raise ValueError(f"edge {e} out of range")
            i, j = min(i, j), max(i, j)
            if (i, j) in seen:
                continue
            seen.add((i, j))
            norm.append((i, j))
        object.__setattr__(self, "edges", tuple(sorted(norm)))
        object.__setattr__(self, "w", _as_float_tuple(self.w))
        object.__setattr__(self, "weight", float(self.weight))
        if len(self.w) != self.n:
            raise ValueError("one weight per node required")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    @cached_property
    def adj_bits(self) -> tuple[int, ...]:
        """adj_bits[i] has bit j-1 set when node i+1 and node j are adjacent."""
        masks = [0] * self.n
        for i, j in self.edges:
            masks[i - 1] |= 1 << (j - 1)
            masks[j - 1] |= 1 << (i - 1)
        return tuple(masks)

    @staticmethod
    def _ones_mask(bits: Bits) -> int:
        return bits_to_suffix(bits, 0)

    def _independent(self, bits: Bits) -> bool:
        mask = self._ones_mask(bits)
        return all(
            not (mask & (1 << (i - 1)) and mask & (1 << (j - 1)))
            for i, j in self.edges
        )

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return self._independent(key.xi)

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        return self._independent(as_bits(x, self.n))

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = as_bits(x, self.n)
        if not self._independent(bits):
            raise InfeasibleError("picked set is not independent")
        return sum(self.w[j] for j in range(self.n) if bits[j])

    def base_value(self, xi: Sequence[int]) -> float:
        return self.terminal_value(xi)

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        outs = [TransitionOutcome(0, _child(key, 0), 0.0)]
        if not (self.adj_bits[key.k - 1] & self._ones_mask(key.xi)):
            outs.append(TransitionOutcome(1, _child(key, 1), 0.0))
        return outs

    def value_scale(self) -> float:
        return max(sum(abs(v) for v in self.w), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        n = self.n
        feas: list[np.ndarray] = [np.empty(0)] * (n + 1)
        feas[n] = np.ones(1, dtype=bool)
        for k in range(n, 0, -1):
            cur = np.empty(feas[k].size * 2, dtype=bool)
            cur[0::2] = feas[k]
            shifted = self.adj_bits[k - 1] >> k
            idx = np.arange(feas[k].size, dtype=np.int64)
            cur[1::2] = feas[k] & ((idx & shifted) == 0)
            feas[k - 1] = cur
        base = assignment_sums(self.w)
        base[~feas[0]] = np.nan
        zeros = [None] + [np.zeros(1 << (n - k)) for k in range(1, n + 1)]
        return LevelSystem(n=n, base=base, feas=feas, r0=zeros, r1=list(zeros))

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "edges": [list(e) for e in self.edges],
            "w": list(self.w),
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Mwis":
        return cls(
            n=d["n"],
            edges=tuple(tuple(e) for e in d["edges"]),
            w=d["w"],
            weight=d.get("weight", 1.0),
        )


# ---------------------------------------------------------------------------
# Max-cut (directed matrix allowed)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaxCut:
    """Max-cut with objective ``sum_ij R_ij * x_i * (1 - x_j)``.

    ``R`` need not be symmetric.  Fixing variable ``k`` against the already
    fixed variables pays, on the 0-branch, the arcs *into* ``k`` from fixed
    1-nodes (``R[j,k]``), and on the 1-branch the arcs *out of* ``k`` into
    fixed 0-nodes (``R[k,j]``).  Diagonal entries never contribute.
    """

    r: tuple[tuple[float, ...], ...]
    weight: float = 1.0
    family = "max_cut"

    def __post_init__(self):
        object.__setattr__(
            self, "r", tuple(_as_float_tuple(row) for row in self.r)
        )
        object.__setattr__(self, "weight", float(self.weight))
        n = len(self.r)
        if n < 1 or any(len(row) != n for row in self.r):
            raise ValueError("r must be a non-empty square matrix")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    @property
    def n(self) -> int:
        return len(self.r)

    @cached_property
    def _mat(self) -> np.ndarray:
        return np.asarray(self.r, dtype=float)

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return True

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        as_bits(x, self.n)
        return True

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = np.asarray(as_bits(x, self.n), dtype=float)
        return float(bits @ self._mat @ (1.0 - bits))

    def base_value(self, xi: Sequence[int]) -> float:
        # Every pair's cut contribution is paid as a reward when the
        # lower-indexed endpoint is fixed, so nothing is left at level 0.
        as_bits(xi, self.n)
        return 0.0

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        k, xi = key.k, key.xi
        r = self.r
        reward0 = sum(r[j][k - 1] for j in range(k, self.n) if xi[j] == 1)
        reward1 = sum(r[k - 1][j] for j in range(k, self.n) if xi[j] == 0)
        return [
            TransitionOutcome(0, _child(key, 0), reward0),
            TransitionOutcome(1, _child(key, 1), reward1),
        ]

    def value_scale(self) -> float:
        return max(float(np.abs(self._mat).sum()), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        n = self.n
        mat = self._mat
        r0: list = [None]
        r1: list = [None]
        for k in range(1, n + 1):
            col = mat[k:, k - 1]
            row = mat[k - 1, k:]
            r0.append(suffix_dot(n - k, col))
            r1.append(row.sum() - suffix_dot(n - k, row))
        base = np.zeros(1 << n)
        feas = [np.ones(1 << (n - k), dtype=bool) for k in range(n + 1)]
        return LevelSystem(n=n, base=base, feas=feas, r0=r0, r1=r1)

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "r": [list(row) for row in self.r],
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "MaxCut":
        return cls(r=tuple(tuple(row) for row in d["r"]), weight=d.get("weight", 1.0))


# ---------------------------------------------------------------------------
# Black-box tabulated objective
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlackBox:
    """Arbitrary objective tabulated over all 2^n assignments.

    ``values[s]`` is the objective of the assignment whose bits form the
    integer ``s`` with variable 1 as the least-significant bit.
    """

    n: int
    values: tuple[float, ...]
    weight: float = 1.0
    family = "black_box"

    def __post_init__(self):
        object.__setattr__(self, "values", _as_float_tuple(self.values))
        object.__setattr__(self, "weight", float(self.weight))
        if self.n < 1:
            raise ValueError("n must be positive")
        if len(self.values) != 1 << self.n:
            raise ValueError(f"need 2^{self.n} tabulated values")
        if self.weight <= 0:
            raise ValueError("weight must be positive")

    def feasible_key(self, key: SubInstanceKey) -> bool:
        return True

    def feasible_assignment(self, x: Sequence[int]) -> bool:
        as_bits(x, self.n)
        return True

    def terminal_value(self, x: Sequence[int]) -> float:
        bits = as_bits(x, self.n)
        return self.values[bits_to_suffix(bits, 0)]

    def base_value(self, xi: Sequence[int]) -> float:
        return self.terminal_value(xi)

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]:
        _check_key(key, self.n)
        return [
            TransitionOutcome(0, _child(key, 0), 0.0),
            TransitionOutcome(1, _child(key, 1), 0.0),
        ]

    def value_scale(self) -> float:
        return max(max(abs(v) for v in self.values), _SCALE_FLOOR)

    def level_system(self) -> LevelSystem:
        n = self.n
        base = np.asarray(self.values, dtype=float)
        feas = [np.ones(1 << (n - k), dtype=bool) for k in range(n + 1)]
        zeros = [None] + [np.zeros(1 << (n - k)) for k in range(1, n + 1)]
        return LevelSystem(n=n, base=base.copy(), feas=feas, r0=zeros, r1=list(zeros))

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "values": list(self.values),
            "weight": self.weight,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "BlackBox":
        return cls(n=d["n"], values=d["values"], weight=d.get("weight", 1.0))


FAMILIES = {
    cls.family: cls
    for cls in (
        KnapsackGuarded,
        KnapsackArtificial,
        KnapsackPenalty,
        MaxSat,
        Mwis,
        MaxCut,
        BlackBox,
    )
}


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KnapsackParams:
    n: int = 10
    c_low: float = 1.0
    c_high: float = 100.0
    a_low: float = 1.0
    a_high: float = 20.0
    capacity_ratio: float = 0.5
    integral: bool = True


@dataclass(frozen=True)
class MaxSatParams:
    n: int = 10
    m: int | None = None  # number of clauses; default 3n
    clause_len: int = 3
    coeff_low: float = 1.0
    coeff_high: float = 10.0


@dataclass(frozen=True)
class MwisParams:
    n: int = 10
    edge_prob: float = 0.3
    w_low: float = 1.0
    w_high: float = 10.0
    fixed_graph: bool = False  # one shared graph, weights resampled


@dataclass(frozen=True)
class MaxCutParams:
    n: int = 10
    density: float = 0.5
    r_low: float = 0.0
    r_high: float = 1.0
    symmetric: bool = True


@dataclass(frozen=True)
class BlackBoxParams:
    n: int = 8
    mu: float = 0.0
    sigma: float = 1.0


PARAM_TYPES = {
    "knapsack_guarded": KnapsackParams,
    "knapsack_artificial": KnapsackParams,
    "knapsack_penalty": KnapsackParams,
    "max_sat": MaxSatParams,
    "mwis": MwisParams,
    "max_cut": MaxCutParams,
    "black_box": BlackBoxParams,
}


def make_params(family: str, params) -> object:
    """Coerce a dict (or params instance) into the family's params type."""
    if family not in PARAM_TYPES:
        raise ValueError(f"unknown family {family!r}")
    ptype = PARAM_TYPES[family]
    if isinstance(params, ptype):
        return params
    if params is None:
        return ptype()
    if isinstance(params, dict):
        allowed = {f.name for f in fields(ptype)}
        bad = set(params) - allowed
        if bad:
            raise ValueError(f"unknown {family} params: {sorted(bad)}")
        return ptype(**params)
    raise TypeError(f"cannot interpret {type(params).__name__} as {ptype.__name__}")


def _gen_knapsack_payload(p: KnapsackParams, rng: np.random.Generator):
    if p.integral:
        c = rng.integers(int(p.c_low), int(p.c_high) + 1, size=p.n).astype(float)
        a = rng.integers(int(p.a_low), int(p.a_high) + 1, size=p.n).astype(float)
        b = float(np.floor(p.capacity_ratio * a.sum()))
    else:
        c = rng.uniform(p.c_low, p.c_high, size=p.n)
        a = rng.uniform(p.a_low, p.a_high, size=p.n)
        b = float(p.capacity_ratio * a.sum())
    return tuple(c), tuple(a), b


def _gen_maxsat(p: MaxSatParams, rng: np.random.Generator) -> MaxSat:
    m = 3 * p.n if p.m is None else p.m
    clauses = []
    for _ in range(m):
        length = int(rng.integers(1, min(p.clause_len, p.n) + 1))
        variables = rng.choice(p.n, size=length, replace=False) + 1
        signs = rng.choice([-1, 1], size=length)
        clauses.append(tuple(int(v * s) for v, s in zip(variables, signs)))
    coeffs = rng.uniform(p.coeff_low, p.coeff_high, size=m)
    return MaxSat(n=p.n, clauses=tuple(clauses), coeffs=tuple(coeffs))


def _gen_mwis_edges(n: int, edge_prob: float, rng: np.random.Generator):
    edges = []
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            if rng.random() < edge_prob:
                edges.append((i, j))
    return tuple(edges)


def _gen_maxcut(p: MaxCutParams, rng: np.random.Generator) -> MaxCut:
    mask = rng.random((p.n, p.n)) < p.density
    vals = rng.uniform(p.r_low, p.r_high, size=(p.n, p.n))
    r = np.where(mask, vals, 0.0)
    if p.symmetric:
        r = np.triu(r, k=1)
        r = r + r.T
    np.fill_diagonal(r, 0.0)
    return MaxCut(r=tuple(tuple(row) for row in r))


def generate(family: str, params, rng: np.random.Generator, count: int) -> list:
    """Draw ``count`` instances of a family; each gets weight ``1 / count``.

    Deterministic given the generator state.  ``params`` may be a dict or
    the family's params dataclass; ``count = 0`` returns an empty list.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return []
    p = make_params(family, params)
    wt = 1.0 / count
    out: list = []
    if family in ("knapsack_guarded", "knapsack_artificial", "knapsack_penalty"):
        cls = FAMILIES[family]
        for _ in range(count):
            c, a, b = _gen_knapsack_payload(p, rng)
            out.append(cls(c=c, a=a, b=b, weight=wt))
    elif family == "max_sat":
        for _ in range(count):
            inst = _gen_maxsat(p, rng)
            out.append(MaxSat(n=inst.n, clauses=inst.clauses, coeffs=inst.coeffs, weight=wt))
    elif family == "mwis":
        shared = _gen_mwis_edges(p.n, p.edge_prob, rng) if p.fixed_graph else None
        for _ in range(count):
            edges = shared if shared is not None else _gen_mwis_edges(p.n, p.edge_prob, rng)
            w = tuple(rng.uniform(p.w_low, p.w_high, size=p.n))
            out.append(Mwis(n=p.n, edges=edges, w=w, weight=wt))
    elif family == "max_cut":
        for _ in range(count):
            inst = _gen_maxcut(p, rng)
            out.append(MaxCut(r=inst.r, weight=wt))
    elif family == "black_box":
        for _ in range(count):
            values = rng.normal(p.mu, p.sigma, size=1 << p.n)
            out.append(BlackBox(n=p.n, values=tuple(values), weight=wt))
    else:
        raise ValueError(f"unknown family {family!r}")
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def instance_from_json(d: dict):
    """Rebuild an instance from its JSON dict (inverse of ``to_json_dict``)."""
    family = d.get("family")
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    return FAMILIES[family].from_json_dict(d)


def write_instances(path: str | Path, instances: Iterable) -> None:
    """Write instances as JSON Lines, one instance per line."""
    with open(path, "w") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json_dict()) + "\n")


def read_instances(path: str | Path) -> list:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(instance_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad instance record: {exc}") from exc
    return out


def _join(values: Iterable[float]) -> str:
    return ";".join(repr(float(v)) for v in values)


def write_csv(path: str | Path, instances: Iterable) -> None:
    """Tabular export of a batch (see formats.md for the column layout)."""
    cols = ["family", "n", "weight", "c", "a", "b", "clauses", "coeffs",
            "edges", "w", "r", "values"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for inst in instances:
            row = {"family": inst.family, "n": inst.n, "weight": repr(inst.weight)}
            if inst.family in ("knapsack_guarded", "knapsack_artificial", "knapsack_penalty"):
                row.update(c=_join(inst.c), a=_join(inst.a), b=repr(inst.b))
            elif inst.family == "max_sat":
                row["clauses"] = "|".join(" ".join(str(l) for l in cl) for cl in inst.clauses)
                row["coeffs"] = _join(inst.coeffs)
            elif inst.family == "mwis":
                row["edges"] = ";".join(f"{i}-{j}" for i, j in inst.edges)
                row["w"] = _join(inst.w)
            elif inst.family == "max_cut":
                row["r"] = _join(v for r_row in inst.r for v in r_row)
            elif inst.family == "black_box":
                row["values"] = _join(inst.values)
            writer.writerow(row)
