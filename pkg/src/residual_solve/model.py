"""Value-function models: smoothing surrogates, features, MLP, loss, checkpoints.

A value model maps ``(instance, key)`` to a real number.  Level-0 keys are
always pinned to the instance's base values; levels >= 1 go through a small
fully-connected network over hand-crafted per-family features, and the raw
network output is multiplied by the instance's ``value_scale()`` so one set
of weights serves instances of different magnitudes.

Training minimizes a smoothed version of the summed |one-step residual|:
the branch maximum is replaced by a softmax-weighted average with sharpness
``alpha_max`` and the absolute value by a smooth even surrogate with
sharpness ``alpha_abs``; both converge to the exact quantities as the
sharpness grows.  ``residual_loss_and_grad`` assembles the batch loss and
its exact reverse-mode gradient in one pass; ``kind="exact"`` swaps in the
hard max and a sign-based subgradient (sign(0) = 0) for comparison runs.

``TableValueModel`` wraps any value table in the same interface with an
empty parameter vector, so the loss/gradient machinery can be exercised
against exact oracles (zero loss, zero gradient).
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import GuardExceededError, TABLE_GUARD, SubInstanceKey, key_from_suffix

__all__ = [
    "NonFiniteError",
    "smooth_max",
    "smooth_max_grad",
    "smooth_abs",
    "smooth_abs_grad",
    "Architecture",
    "theta_size",
    "init_theta",
    "mlp_forward",
    "mlp_backward",
    "feature_dim",
    "encode",
    "encode_level",
    "ValueModel",
    "TableValueModel",
    "residual_loss_and_grad",
    "save_checkpoint",
    "load_checkpoint",
]


class NonFiniteError(FloatingPointError):
    """A value, loss, or gradient came out NaN/inf; the message names the key."""


# ---------------------------------------------------------------------------
# Smoothing surrogates
# ---------------------------------------------------------------------------


def smooth_max(x: float, y: float, alpha: float) -> float:
    """Softmax-weighted average of two values; exact max as alpha grows.

    Ties return the common value exactly.  Always lies within
    ``[max(x, y) - |x - y|, max(x, y)]`` and is monotone in both arguments.
    """
    if alpha <= 0:
        raise ValueError("sharpness alpha must be positive")
    if x == y:
        return x
    m = x if x > y else y
    ex = math.exp(alpha * (x - m))
    ey = math.exp(alpha * (y - m))
    return (x * ex + y * ey) / (ex + ey)


def smooth_max_grad(x: float, y: float, alpha: float) -> tuple[float, float]:
    """Partial derivatives of ``smooth_max`` with respect to x and y."""
    if alpha <= 0:
        raise ValueError("sharpness alpha must be positive")
    m = x if x > y else y
    ex = math.exp(alpha * (x - m))
    ey = math.exp(alpha * (y - m))
    px = ex / (ex + ey)
    py = ey / (ex + ey)
    cross = alpha * px * py
    return px + cross * (x - y), py + cross * (y - x)


def smooth_abs(x: float, alpha: float, kind: str = "tanh") -> float:
    """Smooth even surrogate of |x|.

    ``kind="tanh"``: ``x * tanh(alpha * x)`` — sharpens as ``alpha`` grows,
    never exceeds |x|, and is within ``1/alpha`` of it everywhere.
    ``kind="sqrt"``: ``sqrt(x^2 + alpha^2)`` — here ``alpha`` is the
    smoothing *width*: the surrogate overshoots |x| by at most ``alpha`` and
    sharpens as the width shrinks.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if kind == "tanh":
        return x * math.tanh(alpha * x)
    if kind == "sqrt":
        return math.sqrt(x * x + alpha * alpha)
    raise ValueError(f"unknown smooth_abs kind {kind!r}")


def smooth_abs_grad(x: float, alpha: float, kind: str = "tanh") -> float:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if kind == "tanh":
        t = math.tanh(alpha * x)
        return t + alpha * x * (1.0 - t * t)
    if kind == "sqrt":
        return x / math.sqrt(x * x + alpha * alpha)
    raise ValueError(f"unknown smooth_abs kind {kind!r}")


# ---------------------------------------------------------------------------
# Feature encoders
# ---------------------------------------------------------------------------

_KNAPSACK_FAMILIES = ("knapsack_guarded", "knapsack_artificial", "knapsack_penalty")

_FEATURE_DIMS = {
    "knapsack_guarded": 6,
    "knapsack_artificial": 6,
    "knapsack_penalty": 6,
    "max_cut": 6,
    "max_sat": 6,
    "mwis": 6,
    "black_box": 3,
}


def feature_dim(family: str) -> int:
    """Length of the feature vector; fixed per family, independent of n."""
    if family not in _FEATURE_DIMS:
        raise ValueError(f"unknown family {family!r}")
    return _FEATURE_DIMS[family]


def _static(instance, builder):
    """Per-instance memo for encoder statics (instances are immutable)."""
    cache = instance.__dict__.get("_model_static")
    if cache is None:
        cache = builder(instance)
        instance.__dict__["_model_static"] = cache
    return cache


def _scale_of(instance) -> float:
    s = instance.__dict__.get("_value_scale")
    if s is None:
        s = instance.value_scale()
        instance.__dict__["_value_scale"] = s
    return s


def _knapsack_static(inst):
    if inst.family == "knapsack_artificial":
        c, a = inst._ext
    else:
        c, a = inst.c, inst.a
    c_arr = np.asarray(c, dtype=float)
    a_arr = np.asarray(a, dtype=float)
    return {
        "c": c_arr,
        "a": a_arr,
        "c_t": tuple(float(v) for v in c),
        "a_t": tuple(float(v) for v in a),
        "csum": max(float(np.abs(c_arr).sum()), 1e-9),
        "asum": max(float(np.abs(a_arr).sum()), 1e-9),
        "cprefix": np.concatenate([[0.0], np.cumsum(c_arr)]),
        "aprefix": np.concatenate([[0.0], np.cumsum(a_arr)]),
    }


def _encode_knapsack_one(inst, k: int, s: int) -> list[float]:
    st = _static(inst, _knapsack_static)
    n = inst.n
    a_t, c_t = st["a_t"], st["c_t"]
    load = 0.0
    t = k
    while s:
        if s & 1:
            load += a_t[t]
        s >>= 1
        t += 1
    cap_left = inst.b - load
    cnt = 0
    prof = 0.0
    for j in range(k):
        if a_t[j] <= cap_left:
            cnt += 1
            prof += c_t[j]
    return [
        k / n,
        cap_left / st["asum"],
        st["cprefix"][k] / st["csum"],
        st["aprefix"][k] / st["asum"],
        cnt / n,
        prof / st["csum"],
    ]


def _encode_knapsack(inst, k: int, suffixes: np.ndarray) -> np.ndarray:
    st = _static(inst, _knapsack_static)
    n = inst.n
    c, a = st["c"], st["a"]
    tail = a[k:]
    m = n - k
    rows = suffixes.shape[0]
    loads = np.zeros(rows)
    for t in range(m):
        loads += ((suffixes >> t) & 1) * tail[t]
    cap_left = inst.b - loads
    out = np.empty((rows, 6))
    out[:, 0] = k / n
    out[:, 1] = cap_left / st["asum"]
    out[:, 2] = st["cprefix"][k] / st["csum"]
    out[:, 3] = st["aprefix"][k] / st["asum"]
    if k:
        fits = a[:k][None, :] <= cap_left[:, None]
        out[:, 4] = fits.sum(axis=1) / n
        out[:, 5] = (fits * c[:k][None, :]).sum(axis=1) / st["csum"]
    else:
        out[:, 4] = 0.0
        out[:, 5] = 0.0
    return out


def _maxcut_static(inst):
    mat = inst._mat
    absmat = np.abs(mat)
    scale = max(float(absmat.sum()), 1e-9)
    # in_pref[j, k] = sum over i <= k of R[j, i]; out_pref[j, k] same on R.T
    in_pref = np.concatenate([np.zeros((inst.n, 1)), np.cumsum(mat, axis=1)], axis=1)
    out_pref = np.concatenate([np.zeros((inst.n, 1)), np.cumsum(mat.T, axis=1)], axis=1)
    free_pair = np.array(
        [absmat[:k, :k].sum() for k in range(inst.n + 1)]
    )
    return {
        "in": in_pref,
        "out": out_pref,
        "in_l": in_pref.tolist(),
        "out_l": out_pref.tolist(),
        "free": free_pair,
        "scale": scale,
    }


def _encode_maxcut_one(inst, k: int, s: int) -> list[float]:
    st = _static(inst, _maxcut_static)
    n = inst.n
    m = n - k
    in_l, out_l = st["in_l"], st["out_l"]
    in_mass = 0.0
    out_mass = 0.0
    ones = 0
    for t in range(m):
        if (s >> t) & 1:
            in_mass += in_l[k + t][k]
            ones += 1
        else:
            out_mass += out_l[k + t][k]
    return [
        k / n,
        in_mass / st["scale"],
        out_mass / st["scale"],
        st["free"][k] / st["scale"],
        ones / max(m, 1),
        0.0 if m == 0 else float(s & 1),
    ]


def _encode_maxcut(inst, k: int, suffixes: np.ndarray) -> np.ndarray:
    st = _static(inst, _maxcut_static)
    n = inst.n
    m = n - k
    rows = suffixes.shape[0]
    in_mass = np.zeros(rows)
    out_mass = np.zeros(rows)
    ones = np.zeros(rows)
    for t in range(m):
        bit = ((suffixes >> t) & 1).astype(float)
        j = k + t  # 0-based variable index
        in_mass += bit * st["in"][j, k]
        out_mass += (1.0 - bit) * st["out"][j, k]
        ones += bit
    out = np.empty((rows, 6))
    out[:, 0] = k / n
    out[:, 1] = in_mass / st["scale"]
    out[:, 2] = out_mass / st["scale"]
    out[:, 3] = st["free"][k] / st["scale"]
    out[:, 4] = ones / max(m, 1)
    out[:, 5] = 0.0 if m == 0 else (suffixes & 1).astype(float)
    return out


def _maxsat_static(inst):
    pos = np.array(
        [sum(1 << (l - 1) for l in cl if l > 0) for cl in inst.clauses],
        dtype=np.int64,
    )
    neg = np.array(
        [sum(1 << (-l - 1) for l in cl if l < 0) for cl in inst.clauses],
        dtype=np.int64,
    )
    lens = np.array([len(cl) for cl in inst.clauses], dtype=float)
    wts = np.asarray(inst.coeffs, dtype=float)
    return {
        "pos": pos,
        "neg": neg,
        "all": pos | neg,
        "lens": lens,
        "wts": wts,
        "wsum": max(float(np.abs(wts).sum()), 1e-9),
        "rows_l": [
            (int(p), int(g), int(p) | int(g), float(ln), float(w))
            for p, g, ln, w in zip(pos, neg, lens, wts)
        ],
        "density": min(1.0, len(inst.clauses) / (3.0 * inst.n)),
    }


def _encode_maxsat_one(inst, k: int, s: int) -> list[float]:
    st = _static(inst, _maxsat_static)
    n = inst.n
    x = s << k
    free_bits = (1 << k) - 1
    sat_mass = 0.0
    dead_mass = 0.0
    undec_mass = 0.0
    frac_sum = 0.0
    undec_cnt = 0
    for pos, neg, allm, ln, w in st["rows_l"]:
        sat = (x & pos) != 0 or (~x & neg & ~free_bits) != 0
        if allm & free_bits:
            if not sat:
                undec_mass += w
                frac_sum += (allm & free_bits).bit_count() / ln
                undec_cnt += 1
        elif not sat:
            dead_mass += w
        if sat:
            sat_mass += w
    return [
        k / n,
        sat_mass / st["wsum"],
        dead_mass / st["wsum"],
        undec_mass / st["wsum"],
        frac_sum / max(undec_cnt, 1.0),
        st["density"],
    ]


def _encode_maxsat(inst, k: int, suffixes: np.ndarray) -> np.ndarray:
    st = _static(inst, _maxsat_static)
    n = inst.n
    rows = suffixes.shape[0]
    x = suffixes.astype(np.int64) << k
    free_bits = (1 << k) - 1
    sat_mass = np.zeros(rows)
    dead_mass = np.zeros(rows)
    undec_mass = np.zeros(rows)
    frac_sum = np.zeros(rows)
    undec_cnt = np.zeros(rows)
    for pos, neg, allm, ln, w in zip(
        st["pos"], st["neg"], st["all"], st["lens"], st["wts"]
    ):
        sat = ((x & pos) != 0) | ((~x & neg & ~free_bits) != 0)
        if allm & free_bits:
            undec = ~sat
            undec_mass += w * undec
            frac_sum += (int(allm & free_bits).bit_count() / ln) * undec
            undec_cnt += undec
        else:
            dead_mass += w * ~sat
        sat_mass += w * sat
    out = np.empty((rows, 6))
    out[:, 0] = k / n
    out[:, 1] = sat_mass / st["wsum"]
    out[:, 2] = dead_mass / st["wsum"]
    out[:, 3] = undec_mass / st["wsum"]
    out[:, 4] = frac_sum / np.maximum(undec_cnt, 1.0)
    out[:, 5] = min(1.0, len(inst.clauses) / (3.0 * n))
    return out


def _mwis_static(inst):
    w = np.asarray(inst.w, dtype=float)
    edge_prefix = np.zeros(inst.n + 1)
    for k in range(1, inst.n + 1):
        edge_prefix[k] = sum(1 for i, j in inst.edges if j <= k)
    binom = np.maximum(np.arange(inst.n + 1) * (np.arange(inst.n + 1) - 1) / 2, 1.0)
    density = edge_prefix / binom
    return {
        "w": w,
        "w_t": tuple(float(v) for v in inst.w),
        "wsum": max(float(np.abs(w).sum()), 1e-9),
        "adj": inst.adj_bits,
        "edge_density": density,
        "ed_l": density.tolist(),
    }


def _encode_mwis_one(inst, k: int, s: int) -> list[float]:
    st = _static(inst, _mwis_static)
    n = inst.n
    w_t, adj = st["w_t"], st["adj"]
    x = s << k
    fixed_w = 0.0
    t = k
    ss = s
    while ss:
        if ss & 1:
            fixed_w += w_t[t]
        ss >>= 1
        t += 1
    avail_w = 0.0
    avail_cnt = 0
    for j in range(k):
        if not x & adj[j]:
            avail_w += w_t[j]
            avail_cnt += 1
    return [
        k / n,
        fixed_w / st["wsum"],
        avail_w / st["wsum"],
        avail_cnt / n,
        st["ed_l"][k],
        float(x != 0),
    ]


def _encode_mwis(inst, k: int, suffixes: np.ndarray) -> np.ndarray:
    st = _static(inst, _mwis_static)
    n = inst.n
    rows = suffixes.shape[0]
    x = suffixes.astype(np.int64) << k
    fixed_w = np.zeros(rows)
    for t in range(n - k):
        fixed_w += ((suffixes >> t) & 1) * st["w"][k + t]
    avail_w = np.zeros(rows)
    avail_cnt = np.zeros(rows)
    for j in range(k):
        open_j = (x & st["adj"][j]) == 0
        avail_w += open_j * st["w"][j]
        avail_cnt += open_j
    out = np.empty((rows, 6))
    out[:, 0] = k / n
    out[:, 1] = fixed_w / st["wsum"]
    out[:, 2] = avail_w / st["wsum"]
    out[:, 3] = avail_cnt / n
    out[:, 4] = st["edge_density"][k]
    out[:, 5] = x.astype(np.int64) != 0  # any node picked yet
    return out


def _blackbox_static(inst):
    return {
        "vals": np.asarray(inst.values, dtype=float),
        "vals_t": tuple(float(v) for v in inst.values),
        "scale": inst.value_scale(),
    }


def _encode_blackbox_one(inst, k: int, s: int) -> list[float]:
    st = _static(inst, _blackbox_static)
    n = inst.n
    return [
        k / n,
        s.bit_count() / max(n - k, 1),
        st["vals_t"][s << k] / st["scale"],
    ]


def _encode_blackbox(inst, k: int, suffixes: np.ndarray) -> np.ndarray:
    st = _static(inst, _blackbox_static)
    n = inst.n
    rows = suffixes.shape[0]
    ones = np.zeros(rows)
    for t in range(n - k):
        ones += (suffixes >> t) & 1
    out = np.empty((rows, 3))
    out[:, 0] = k / n
    out[:, 1] = ones / max(n - k, 1)
    out[:, 2] = st["vals"][suffixes.astype(np.int64) << k] / st["scale"]
    return out


_ENCODERS = {
    "knapsack_guarded": _encode_knapsack,
    "knapsack_artificial": _encode_knapsack,
    "knapsack_penalty": _encode_knapsack,
    "max_cut": _encode_maxcut,
    "max_sat": _encode_maxsat,
    "mwis": _encode_mwis,
    "black_box": _encode_blackbox,
}

# Scalar twins of the vectorized encoders.  Training and decode touch keys one
# at a time, where building little numpy arrays costs more than the features;
# these produce the same numbers with plain int/float arithmetic.
_ENCODERS_ONE = {
    "knapsack_guarded": _encode_knapsack_one,
    "knapsack_artificial": _encode_knapsack_one,
    "knapsack_penalty": _encode_knapsack_one,
    "max_cut": _encode_maxcut_one,
    "max_sat": _encode_maxsat_one,
    "mwis": _encode_mwis_one,
    "black_box": _encode_blackbox_one,
}


def encode_rows(instance, k: int, suffixes: np.ndarray) -> np.ndarray:
    """Feature matrix for the given packed suffixes at level k."""
    if not 0 <= k <= instance.n:
        raise ValueError(f"level {k} out of range")
    return _ENCODERS[instance.family](instance, k, np.asarray(suffixes, dtype=np.int64))


def encode(instance, key: SubInstanceKey) -> np.ndarray:
    """Feature vector of one key."""
    if not 0 <= key.k <= instance.n:
        raise ValueError(f"level {key.k} out of range")
    return np.array(_ENCODERS_ONE[instance.family](instance, key.k, key.suffix))


def encode_level(instance, k: int) -> np.ndarray:
    """Feature matrix of every key at level k, ascending suffix order."""
    count = 1 << (instance.n - k)
    return encode_rows(instance, k, np.arange(count, dtype=np.int64))


# ---------------------------------------------------------------------------
# Flat-parameter MLP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple[int, ...] = (64, 64, 64)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("layer sizes must be positive")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, 1)


def theta_size(arch: Architecture) -> int:
    d = arch.dims
    return sum(d[i] * d[i + 1] + d[i + 1] for i in range(len(d) - 1))


def _views(theta: np.ndarray, arch: Architecture):
    """(W, b) views per layer into the flat parameter vector."""
    d = arch.dims
    out = []
    off = 0
    for i in range(len(d) - 1):
        din, dout = d[i], d[i + 1]
        w = theta[off : off + din * dout].reshape(din, dout)
        off += din * dout
        b = theta[off : off + dout]
        off += dout
        out.append((w, b))
    return out


def init_theta(arch: Architecture, rng: np.random.Generator) -> np.ndarray:
    """Fan-in-scaled symmetric uniform init; final layer zeroed.

    Zeroing the last layer makes the initial model output exactly 0 at all
    levels >= 1, so fresh models start from the all-zero value map.
    """
    theta = np.zeros(theta_size(arch))
    layers = _views(theta, arch)
    for i, (w, b) in enumerate(layers):
        if i < len(layers) - 1:
            bound = 1.0 / math.sqrt(w.shape[0])
            w[:] = rng.uniform(-bound, bound, size=w.shape)
        b[:] = 0.0
    return theta


def mlp_forward(theta: np.ndarray, arch: Architecture, x: np.ndarray):
    """Batch forward pass; returns outputs ``(m,)`` and the activation tape."""
    acts = [np.asarray(x, dtype=float)]
    layers = _views(theta, arch)
    h = acts[0]
    for w, b in layers[:-1]:
        h = np.tanh(h @ w + b)
        acts.append(h)
    w, b = layers[-1]
    y = h @ w + b
    return y[:, 0], acts


def mlp_backward(
    theta: np.ndarray, arch: Architecture, acts: list, dy: np.ndarray
) -> np.ndarray:
    """Gradient of ``sum(dy * y)`` with respect to the flat parameters."""
    grad = np.zeros_like(theta)
    layers = _views(theta, arch)
    gviews = _views(grad, arch)
    dz = np.asarray(dy, dtype=float)[:, None]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = gviews[i]
        a_in = acts[i]
        gw += a_in.T @ dz
        gb += dz.sum(axis=0)
        if i > 0:
            da = dz @ w.T
            dz = da * (1.0 - acts[i] * acts[i])
    return grad


# ---------------------------------------------------------------------------
# Value models
# ---------------------------------------------------------------------------


class ValueModel:
    """Feature MLP with per-instance output scaling and pinned level 0."""

    def __init__(
        self,
        family: str,
        arch: Architecture,
        theta: np.ndarray,
        alpha_max: float = 1.0,
        alpha_abs: float = 1.0,
        abs_kind: str = "tanh",
    ):
        if arch.input_dim != feature_dim(family):
            raise ValueError(
                f"architecture expects {arch.input_dim} inputs, "
                f"{family} features have {feature_dim(family)}"
            )
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (theta_size(arch),):
            raise ValueError(
                f"theta has {theta.shape}, architecture needs ({theta_size(arch)},)"
            )
        self.family = family
        self.arch = arch
        self.theta = theta
        self.alpha_max = float(alpha_max)
        self.alpha_abs = float(alpha_abs)
        self.abs_kind = abs_kind

    @classmethod
    def initialize(
        cls,
        family: str,
        rng: np.random.Generator,
        hidden: Sequence[int] = (64, 64, 64),
        **kwargs,
    ) -> "ValueModel":
        arch = Architecture(input_dim=feature_dim(family), hidden=tuple(hidden))
        return cls(family, arch, init_theta(arch, rng), **kwargs)

    def clone(self) -> "ValueModel":
        return ValueModel(
            self.family,
            self.arch,
            self.theta.copy(),
            self.alpha_max,
            self.alpha_abs,
            self.abs_kind,
        )

    def _check_family(self, instance) -> None:
        if instance.family != self.family:
            raise ValueError(
                f"model trained for {self.family!r} got a {instance.family!r} instance"
            )

    def value(self, instance, key: SubInstanceKey) -> float:
        self._check_family(instance)
        if key.k == 0:
            return instance.base_value(key.xi)
        x = encode(instance, key)[None, :]
        y, _ = mlp_forward(self.theta, self.arch, x)
        v = float(y[0]) * _scale_of(instance)
        if not math.isfinite(v):
            raise NonFiniteError(f"model produced non-finite value at {key}")
        return v

    def values_rows(self, rows: Sequence[tuple[Any, SubInstanceKey]]) -> np.ndarray:
        """Batched values for (instance, key) rows; level-0 rows use base values."""
        vals, _ = self.forward_rows(rows)
        return vals

    def forward_rows(self, rows: Sequence[tuple[Any, SubInstanceKey]]):
        """Values plus the tape needed by ``backward_rows``.

        Level-0 rows bypass the network (pinned, zero gradient).
        """
        net_idx = [i for i, (_, key) in enumerate(rows) if key.k >= 1]
        vals = np.empty(len(rows))
        for i, (inst, key) in enumerate(rows):
            if inst.family != self.family:
                self._check_family(inst)
            if key.k == 0:
                vals[i] = inst.base_value(key.xi)
        if net_idx:
            enc = _ENCODERS_ONE[self.family]
            feats = np.array(
                [enc(rows[i][0], rows[i][1].k, rows[i][1].suffix) for i in net_idx]
            )
            scales = np.array([_scale_of(rows[i][0]) for i in net_idx])
            y, acts = mlp_forward(self.theta, self.arch, feats)
            vals[net_idx] = y * scales
            tape = (net_idx, acts, scales, len(rows))
        else:
            tape = (net_idx, None, None, len(rows))
        bad = np.flatnonzero(~np.isfinite(vals))
        if bad.size:
            raise NonFiniteError(
                f"model produced non-finite value at {rows[int(bad[0])][1]}"
            )
        return vals, tape

    def backward_rows(self, tape, dvals: np.ndarray) -> np.ndarray:
        net_idx, acts, scales, total = tape
        if len(dvals) != total:
            raise ValueError("dvals length does not match the forward batch")
        if not net_idx:
            return np.zeros_like(self.theta)
        dy = np.asarray(dvals, dtype=float)[net_idx] * scales
        return mlp_backward(self.theta, self.arch, acts, dy)

    def level_values(self, instance) -> list[np.ndarray]:
        """Per-level value arrays for exact engine sweeps (enumeration-guarded)."""
        self._check_family(instance)
        n = instance.n
        if n > TABLE_GUARD:
            raise GuardExceededError(
                f"level evaluation requires n <= {TABLE_GUARD}, got n = {n}"
            )
        from . import engine

        ls = engine.build_levels(instance)
        scale = instance.value_scale()
        out = [ls.base.copy()]
        for k in range(1, n + 1):
            y, _ = mlp_forward(self.theta, self.arch, encode_level(instance, k))
            arr = y * scale
            arr[~ls.feas[k]] = np.nan
            out.append(arr)
        return out


class TableValueModel:
    """Exact-table stand-in with an empty parameter vector.

    Lets the loss/gradient machinery run against oracle tables: residuals
    are computed from the stored values and the gradient is a length-0
    vector.
    """

    def __init__(self, table):
        self.table = table
        self.theta = np.zeros(0)
        self.family = table.instance.family
        self.alpha_max = 1.0
        self.alpha_abs = 1.0
        self.abs_kind = "tanh"

    def value(self, instance, key: SubInstanceKey) -> float:
        return self.table.value(instance, key)

    def values_rows(self, rows) -> np.ndarray:
        return np.array([self.table.value(inst, key) for inst, key in rows])

    def forward_rows(self, rows):
        return self.values_rows(rows), len(rows)

    def backward_rows(self, tape, dvals) -> np.ndarray:
        return np.zeros(0)

    def level_values(self, instance) -> list[np.ndarray]:
        return self.table.level_values(instance)


# ---------------------------------------------------------------------------
# Residual loss and gradient
# ---------------------------------------------------------------------------


def residual_loss_and_grad(
    model,
    samples: Sequence[tuple[Any, SubInstanceKey, float]],
    kind: str = "smoothed",
    alpha_max: float | None = None,
    alpha_abs: float | None = None,
    abs_kind: str | None = None,
):
    """Weighted batch residual loss and its gradient in the flat parameters.

    Each sample is ``(instance, key, weight)`` with ``key.k >= 1``.  The
    loss is ``sum of weight * A(delta)`` where ``delta`` is the one-step
    residual with the branch max replaced by ``smooth_max`` and ``A`` the
    chosen absolute-value surrogate; ``kind="exact"`` uses the hard max and
    plain |.| with sign subgradients (sign(0) = 0, ties routed to the
    0-branch).  Single-branch keys never go through the max surrogate.
    """
    if kind not in ("smoothed", "exact"):
        raise ValueError(f"unknown loss kind {kind!r}")
    a_max = model.alpha_max if alpha_max is None else alpha_max
    a_abs = model.alpha_abs if alpha_abs is None else alpha_abs
    a_kind = getattr(model, "abs_kind", "tanh") if abs_kind is None else abs_kind
    if a_kind == "sqrt":
        # sqrt surrogate takes a width; alpha is a sharpness, so invert to
        # keep one annealing direction (larger alpha = closer to |x|)
        a_abs = 1.0 / a_abs

    rows: list[tuple[Any, SubInstanceKey]] = []
    plans = []
    for instance, key, weight in samples:
        if key.k < 1:
            raise ValueError(f"training keys need k >= 1, got {key}")
        outs = instance.transitions(key)
        parent_row = len(rows)
        rows.append((instance, key))
        branch_rows = []
        for o in outs:
            branch_rows.append(len(rows))
            rows.append((instance, o.child))
        plans.append((weight, parent_row, branch_rows, [o.reward for o in outs]))

    vals, tape = model.forward_rows(rows)
    dvals = np.zeros(len(rows))
    loss_terms = []
    for (weight, parent_row, branch_rows, rewards), (instance, key, _) in zip(
        plans, samples
    ):
        scores = [vals[r] + rw for r, rw in zip(branch_rows, rewards)]
        if len(scores) == 1:
            m = scores[0]
            dm = [1.0]
        elif kind == "smoothed":
            m = smooth_max(scores[0], scores[1], a_max)
            dm = list(smooth_max_grad(scores[0], scores[1], a_max))
        else:
            winner = 0 if scores[0] >= scores[1] else 1
            m = scores[winner]
            dm = [0.0, 0.0]
            dm[winner] = 1.0
        delta = m - vals[parent_row]
        if kind == "smoothed":
            term = smooth_abs(delta, a_abs, a_kind)
            dterm = smooth_abs_grad(delta, a_abs, a_kind)
        else:
            term = abs(delta)
            dterm = 0.0 if delta == 0 else math.copysign(1.0, delta)
        if not math.isfinite(term):
            raise NonFiniteError(f"non-finite loss term at {key}")
        loss_terms.append(weight * term)
        dd = weight * dterm
        dvals[parent_row] -= dd
        for r, g in zip(branch_rows, dm):
            dvals[r] += dd * g
    loss = math.fsum(loss_terms)
    grad = model.backward_rows(tape, dvals)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    return loss, grad


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CHECKPOINT_FORMAT = "residual-solve-checkpoint"
_CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, model: ValueModel, extra: dict | None = None) -> None:
    """Versioned JSON checkpoint; parameters as base64 little-endian float64."""
    payload = {
        "format": _CHECKPOINT_FORMAT,
        "version": _CHECKPOINT_VERSION,
        "family": model.family,
        "input_dim": model.arch.input_dim,
        "hidden": list(model.arch.hidden),
        "alpha_max": model.alpha_max,
        "alpha_abs": model.alpha_abs,
        "abs_kind": model.abs_kind,
        "theta": base64.b64encode(
            model.theta.astype("<f8").tobytes()
        ).decode("ascii"),
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[ValueModel, dict]:
    """Inverse of ``save_checkpoint``; round-trips parameters bit-exactly."""
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != _CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if payload.get("version") != _CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    arch = Architecture(
        input_dim=int(payload["input_dim"]), hidden=tuple(payload["hidden"])
    )
    theta = np.frombuffer(
        base64.b64decode(payload["theta"]), dtype="<f8"
    ).astype(float)
    model = ValueModel(
        payload["family"],
        arch,
        theta,
        alpha_max=payload["alpha_max"],
        alpha_abs=payload["alpha_abs"],
        abs_kind=payload["abs_kind"],
    )
    return model, payload.get("extra", {})
