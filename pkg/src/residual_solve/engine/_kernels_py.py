"""Pure-numpy level-sweep kernels (fallback backend).

Each kernel consumes the previous level's per-key array plus the current
level's rewards/feasibility and produces the current level's array.  Keys
are indexed by packed suffix; the children of key ``s`` sit at ``2s`` and
``2s + 1`` in the previous level.  Infeasible entries are NaN on the way in
and NaN on the way out; feasibility masks keep NaNs out of every reduction.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "numpy"


def sweep_values(prev, feas_prev, r0, r1, feas_k):
    """Bellman sweep: max over feasible branches of reward + child value."""
    c0 = np.where(feas_prev[0::2], r0 + prev[0::2], -np.inf)
    c1 = np.where(feas_prev[1::2], r1 + prev[1::2], -np.inf)
    out = np.maximum(c0, c1)
    out[~feas_k] = np.nan
    return out


def sweep_delta_abs(vals_k, prev, feas_prev, r0, r1, feas_k):
    """|one-step residual| of the value level ``vals_k`` against its children."""
    c0 = np.where(feas_prev[0::2], r0 + prev[0::2], -np.inf)
    c1 = np.where(feas_prev[1::2], r1 + prev[1::2], -np.inf)
    out = np.abs(np.maximum(c0, c1) - vals_k)
    out[~feas_k] = np.nan
    return out


def sweep_rhs(rhs_prev, dabs_k, feas_prev, feas_k):
    """Telescoped residual mass: own |delta| plus both children's masses."""
    e = np.where(feas_prev[0::2], rhs_prev[0::2], 0.0)
    o = np.where(feas_prev[1::2], rhs_prev[1::2], 0.0)
    out = dabs_k + e + o
    out[~feas_k] = np.nan
    return out


def masked_sum(x, mask) -> float:
    """Compensated sum of x over the mask."""
    return math.fsum(x[mask])
