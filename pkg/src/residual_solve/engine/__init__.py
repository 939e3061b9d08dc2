"""Vectorized sweeps over the sub-instance tree, with backend selection.

Two interchangeable kernel backends exist: a compiled Cython extension and
a pure-numpy fallback.  The compiled backend is preferred when the
extension was built; set ``RESIDUAL_SOLVE_PURE=1`` to force the fallback.
``backend_name()`` reports which one is live.  Both are exercised against
the per-key reference implementations in ``core`` by the test suite, and
``benchmarks/bench_kernels.py`` compares their throughput.

All functions here operate on a ``LevelSystem`` (see ``levels``) and lists
of per-level value arrays indexed ``levels[k][suffix]``, NaN at infeasible
keys, level 0 pinned to the base values.
"""

from __future__ import annotations

import os
from typing import Any

import numpy as np

from .levels import LevelSystem, assignment_sums, suffix_dot

__all__ = [
    "LevelSystem",
    "assignment_sums",
    "suffix_dot",
    "backend_name",
    "build_levels",
    "optimal_levels",
    "value_levels",
    "delta_abs_levels",
    "psi_from_levels",
    "first_deviation_violation",
    "root_value",
]

if os.environ.get("RESIDUAL_SOLVE_PURE", "").lower() in ("1", "true", "yes"):
    from . import _kernels_py as _k
else:
    try:
        from . import _kernels_c as _k  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _k


def backend_name() -> str:
    """Name of the live kernel backend: ``"cython"`` or ``"numpy"``."""
    return _k.BACKEND


def build_levels(instance) -> LevelSystem:
    """Dense per-level arrays of an instance (family-specific constructor).

    Materializes ~2^(n+1) entries, the same footprint as a full value
    table, so the table guard applies.
    """
    from ..core import TABLE_GUARD, _check_guard

    _check_guard(instance.n, TABLE_GUARD, "level system")
    return instance.level_system()


def optimal_levels(ls: LevelSystem) -> list[np.ndarray]:
    """Optimal value of every feasible key, level by level (NaN elsewhere)."""
    out = [ls.base.copy()]
    for k in range(1, ls.n + 1):
        out.append(
            _k.sweep_values(out[k - 1], ls.feas[k - 1], ls.r0[k], ls.r1[k], ls.feas[k])
        )
    return out


def value_levels(instance, source: Any, ls: LevelSystem | None = None) -> list[np.ndarray]:
    """Evaluate a value source on every feasible key, as per-level arrays.

    Level 0 is pinned to the base values.  Sources exposing
    ``level_values(instance)`` take a fast path; anything else is evaluated
    key by key.
    """
    from ..core import as_value_fn, key_from_suffix

    if ls is None:
        ls = build_levels(instance)
    if hasattr(source, "level_values"):
        out = [np.asarray(a, dtype=float).copy() for a in source.level_values(instance)]
        if len(out) != ls.n + 1:
            raise ValueError("level_values returned wrong number of levels")
        out[0] = ls.base.copy()
        for k in range(1, ls.n + 1):
            out[k][~ls.feas[k]] = np.nan
        return out
    fn = as_value_fn(source)
    out = [ls.base.copy()]
    for k in range(1, ls.n + 1):
        arr = np.full(1 << (ls.n - k), np.nan)
        feas = ls.feas[k]
        for s in np.flatnonzero(feas):
            arr[s] = fn(instance, key_from_suffix(ls.n, int(k), int(s)))
        out.append(arr)
    return out


def delta_abs_levels(ls: LevelSystem, vals: list[np.ndarray]) -> list:
    """Per-level |one-step residual| arrays of a value assignment (index 0 unused)."""
    out: list = [None]
    for k in range(1, ls.n + 1):
        out.append(
            _k.sweep_delta_abs(
                vals[k], vals[k - 1], ls.feas[k - 1], ls.r0[k], ls.r1[k], ls.feas[k]
            )
        )
    return out


def psi_from_levels(ls: LevelSystem, vals: list[np.ndarray]) -> float:
    """Sum of |delta| over all feasible keys at levels 1..n."""
    dabs = delta_abs_levels(ls, vals)
    return float(
        sum(_k.masked_sum(dabs[k], ls.feas[k]) for k in range(1, ls.n + 1))
    )


def first_deviation_violation(
    ls: LevelSystem,
    vals: list[np.ndarray],
    opt: list[np.ndarray],
    tol: float = 1e-9,
) -> dict | None:
    """Check ``|V* - V| <= telescoped residual mass`` at every feasible key.

    The right-hand side at a key is its own |delta| plus the masses of both
    feasible children, accumulated bottom-up.  Returns a record for the
    first violating key (lowest level, then lowest suffix), or None.
    """
    n = ls.n
    dabs = delta_abs_levels(ls, vals)
    rhs_prev = np.zeros(1 << n)
    rhs_prev[~ls.feas[0]] = np.nan
    for k in range(1, n + 1):
        rhs = _k.sweep_rhs(rhs_prev, dabs[k], ls.feas[k - 1], ls.feas[k])
        dev = np.abs(opt[k] - vals[k])
        bad = ls.feas[k] & (dev > rhs + tol * (1.0 + np.abs(rhs)))
        if np.any(bad):
            s = int(np.flatnonzero(bad)[0])
            from ..core import key_from_suffix

            key = key_from_suffix(n, k, s)
            return {
                "check": "per_key_deviation_bound",
                "k": k,
                "xi": "".join(str(b) for b in key.xi),
                "deviation": float(dev[s]),
                "residual_mass": float(rhs[s]),
            }
        rhs_prev = rhs
    return None


def root_value(vals: list[np.ndarray]) -> float:
    return float(vals[-1][0])
