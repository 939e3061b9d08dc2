"""Sub-instance calculus: keys, residuals, and the optimality-deviation bound.

A problem over n binary variables is refined into sub-instances by fixing a
suffix of the variables.  A sub-instance key is a pair ``(k, xi)`` where
``xi`` is a full bit vector whose first ``k`` positions are zero: variables
``1..k`` are still free, variables ``k+1..n`` are fixed to the bits of
``xi``.  Level ``n`` is the root (everything free), level ``0`` is a full
assignment.

Fixing variable ``k`` of a level-``k`` key produces up to two children at
level ``k-1`` together with an immediate reward (see ``problems``).  The
optimal value function ``V*`` satisfies the recursion

    V*(key) = max over feasible branches of (reward + V*(child))

and for an arbitrary value mapping ``V`` the one-step Bellman residual is

    delta(key) = max over feasible branches of (reward + V(child)) - V(key).

``psi_exact`` sums ``|delta|`` over every feasible key at levels ``1..n``;
``phi_exact`` is the root deviation ``|V(root) - V*(root)|``.  For any ``V``
whose level-0 entries are pinned to the level-0 sub-instance values, the
deviation bound ``phi <= psi`` holds; ``verify_bound`` checks it (and the
per-key telescoped form) exactly on enumerable instances.

Functions here are definitional, written per-key for readability; the
``engine`` package provides equivalent vectorized sweeps used by
``verify_bound`` and the training loop.  Tests assert both paths agree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np

__all__ = [
    "KEY_ENUM_GUARD",
    "TABLE_GUARD",
    "GuardExceededError",
    "InfeasibleError",
    "SubInstanceKey",
    "TransitionOutcome",
    "BoundReport",
    "ValueTable",
    "ZeroValue",
    "as_bits",
    "bits_to_suffix",
    "suffix_to_bits",
    "make_key",
    "root_key",
    "key_from_suffix",
    "enumerate_keys",
    "enumerate_xi_set",
    "as_value_fn",
    "delta_residual",
    "deviation",
    "deviation_abs",
    "psi_exact",
    "phi_exact",
    "verify_bound",
]

# Enumeration guards: explicit key enumeration is permitted up to
# KEY_ENUM_GUARD variables; full tables / exact psi sweeps up to TABLE_GUARD.
KEY_ENUM_GUARD = 24
TABLE_GUARD = 20


class GuardExceededError(ValueError):
    """Raised when an exact-enumeration routine is asked to exceed its guard."""


class InfeasibleError(ValueError):
    """Raised when a value is requested for an infeasible key or assignment."""


Bits = tuple[int, ...]


def as_bits(values: Iterable[int], n: int | None = None) -> Bits:
    """Validate and normalize a 0/1 sequence into a tuple."""
    bits = tuple(int(v) for v in values)
    if any(b not in (0, 1) for b in bits):
        raise ValueError(f"expected 0/1 entries, got {bits!r}")
    if n is not None and len(bits) != n:
        raise ValueError(f"expected {n} bits, got {len(bits)}")
    return bits


def bits_to_suffix(bits: Sequence[int], k: int) -> int:
    """Pack positions k+1..n (1-based) into an integer, position k+1 = bit 0."""
    s = 0
    for j in range(len(bits) - 1, k - 1, -1):
        s = (s << 1) | bits[j]
    return s


def suffix_to_bits(s: int, m: int) -> Bits:
    """Unpack an m-bit suffix integer (little-endian) into a bit tuple."""
    return tuple((s >> j) & 1 for j in range(m))


class SubInstanceKey(NamedTuple):
    """Identifier ``(k, xi)`` of a sub-instance: free prefix 1..k, fixed suffix."""

    k: int
    xi: Bits

    @property
    def n(self) -> int:
        return len(self.xi)

    @property
    def suffix(self) -> int:
        """Fixed suffix packed as an integer (position k+1 is bit 0)."""
        return bits_to_suffix(self.xi, self.k)

    def __str__(self) -> str:  # pragma: no cover - debugging aid
        tail = "".join(str(b) for b in self.xi[self.k :])
        return f"(k={self.k}, suffix={tail or '-'})"


def make_key(k: int, xi: Iterable[int]) -> SubInstanceKey:
    """Build a key, validating that the free prefix of xi is all zero."""
    bits = as_bits(xi)
    if not 0 <= k <= len(bits):
        raise ValueError(f"level {k} out of range for n={len(bits)}")
    if any(bits[:k]):
        raise ValueError(f"first {k} positions of xi must be zero, got {bits}")
    return SubInstanceKey(k, bits)


def root_key(n: int) -> SubInstanceKey:
    return SubInstanceKey(n, (0,) * n)


def key_from_suffix(n: int, k: int, s: int) -> SubInstanceKey:
    """Key at level k of an n-variable problem with fixed suffix integer s."""
    if not 0 <= s < (1 << (n - k)):
        raise ValueError(f"suffix {s} out of range at level {k} (n={n})")
    return SubInstanceKey(k, (0,) * k + suffix_to_bits(s, n - k))


class TransitionOutcome(NamedTuple):
    """One feasible branch of fixing variable k: bit chosen, child key, reward."""

    bit: int
    child: SubInstanceKey
    reward: float


class Instance(Protocol):
    """Structural interface every problem family implements (see ``problems``)."""

    n: int
    family: str
    weight: float

    def terminal_value(self, x: Sequence[int]) -> float: ...

    def base_value(self, xi: Sequence[int]) -> float: ...

    def transitions(self, key: SubInstanceKey) -> list[TransitionOutcome]: ...

    def feasible_key(self, key: SubInstanceKey) -> bool: ...

    def feasible_assignment(self, x: Sequence[int]) -> bool: ...

    def value_scale(self) -> float: ...


# ---------------------------------------------------------------------------
# Key enumeration
# ---------------------------------------------------------------------------


def _check_guard(n: int, guard: int, what: str) -> None:
    if n > guard:
        raise GuardExceededError(f"{what} requires n <= {guard}, got n = {n}")


def enumerate_keys(
    instance: Instance, k: int
) -> list[tuple[SubInstanceKey, bool]]:
    """All 2^(n-k) keys at level k with their feasibility flags.

    Order is ascending suffix integer (position k+1 is the low bit).
    """
    n = instance.n
    _check_guard(n, KEY_ENUM_GUARD, "key enumeration")
    if not 0 <= k <= n:
        raise ValueError(f"level {k} out of range for n={n}")
    out = []
    for s in range(1 << (n - k)):
        key = key_from_suffix(n, k, s)
        out.append((key, instance.feasible_key(key)))
    return out


def enumerate_xi_set(eta: SubInstanceKey, ell: int) -> list[SubInstanceKey]:
    """Level-``ell`` keys that agree with ``eta`` beyond position ``eta.k``.

    These are the keys whose fixed suffixes extend eta's: positions
    ``ell+1..eta.k`` range over all bit patterns, positions beyond ``eta.k``
    are copied from eta.  There are ``2^(eta.k - ell)`` of them;
    at ``ell == eta.k`` the set is ``{eta}``.  Order is ascending over the
    middle-block bits (position ``ell+1`` least significant).
    """
    k = eta.k
    if not 0 <= ell <= k:
        raise ValueError(f"target level {ell} out of range for eta at level {k}")
    head = (0,) * ell
    tail = eta.xi[k:]
    out = []
    for s in range(1 << (k - ell)):
        mid = suffix_to_bits(s, k - ell)
        out.append(SubInstanceKey(ell, head + mid + tail))
    return out


# ---------------------------------------------------------------------------
# Value sources
# ---------------------------------------------------------------------------

ValueFn = Callable[[Any, SubInstanceKey], float]


def as_value_fn(source: Any) -> ValueFn:
    """Normalize a value source into a callable ``(instance, key) -> float``.

    Accepts an object with a ``value`` method, a mapping keyed by
    ``SubInstanceKey``, or a bare callable.
    """
    if hasattr(source, "value"):
        return source.value
    if hasattr(source, "__getitem__") and not callable(source):
        return lambda _inst, key: source[key]
    if callable(source):
        return source
    raise TypeError(f"cannot interpret {type(source).__name__} as a value source")


class ZeroValue:
    """Value source that is zero at levels >= 1 and pinned at level 0."""

    def value(self, instance: Instance, key: SubInstanceKey) -> float:
        if key.k == 0:
            return instance.base_value(key.xi)
        return 0.0

    def level_values(self, instance: Instance) -> list[np.ndarray]:
        from . import engine

        ls = engine.build_levels(instance)
        out = [ls.base.copy()]
        for k in range(1, instance.n + 1):
            vals = np.zeros(1 << (instance.n - k))
            vals[~ls.feas[k]] = np.nan
            out.append(vals)
        return out


class ValueTable:
    """Dense per-key value mapping for one instance, stored level by level.

    Level 0 is always pinned to the instance's level-0 sub-instance values
    and cannot be overwritten.  Entries at infeasible keys are NaN and
    raise on lookup.
    """

    def __init__(self, instance: Instance, levels: list[np.ndarray]):
        n = instance.n
        if len(levels) != n + 1:
            raise ValueError(f"expected {n + 1} levels, got {len(levels)}")
        for k, arr in enumerate(levels):
            if arr.shape != (1 << (n - k),):
                raise ValueError(f"level {k} has shape {arr.shape}")
        self.instance = instance
        self.levels = [np.asarray(a, dtype=float) for a in levels]

    # -- constructors -------------------------------------------------

    @classmethod
    def zeros(cls, instance: Instance) -> "ValueTable":
        from . import engine

        _check_guard(instance.n, TABLE_GUARD, "value table")
        ls = engine.build_levels(instance)
        levels = [ls.base.copy()]
        for k in range(1, instance.n + 1):
            arr = np.zeros(1 << (instance.n - k))
            arr[~ls.feas[k]] = np.nan
            levels.append(arr)
        return cls(instance, levels)

    @classmethod
    def random(
        cls, instance: Instance, rng: np.random.Generator, scale: float = 1.0
    ) -> "ValueTable":
        """Uniform values in [-scale, scale] at levels >= 1; level 0 pinned."""
        table = cls.zeros(instance)
        for k in range(1, instance.n + 1):
            arr = table.levels[k]
            noise = rng.uniform(-scale, scale, size=arr.shape)
            arr[~np.isnan(arr)] = noise[~np.isnan(arr)]
        return table

    @classmethod
    def from_source(cls, instance: Instance, source: Any) -> "ValueTable":
        """Materialize any value source into a dense table."""
        table = cls.zeros(instance)
        fn = as_value_fn(source)
        for k in range(1, instance.n + 1):
            arr = table.levels[k]
            for s in range(arr.size):
                if not np.isnan(arr[s]):
                    arr[s] = fn(instance, key_from_suffix(instance.n, k, s))
        return table

    # -- access --------------------------------------------------------

    def _slot(self, key: SubInstanceKey) -> tuple[int, int]:
        if key.n != self.instance.n:
            raise ValueError("key dimension does not match instance")
        return key.k, key.suffix

    def __getitem__(self, key: SubInstanceKey) -> float:
        k, s = self._slot(key)
        v = self.levels[k][s]
        if np.isnan(v):
            raise InfeasibleError(f"no value stored for infeasible key {key}")
        return float(v)

    def __contains__(self, key: SubInstanceKey) -> bool:
        k, s = self._slot(key)
        return not np.isnan(self.levels[k][s])

    def set(self, key: SubInstanceKey, value: float) -> None:
        k, s = self._slot(key)
        if k == 0:
            raise ValueError("level-0 entries are pinned and cannot be set")
        if np.isnan(self.levels[k][s]):
            raise InfeasibleError(f"cannot set value at infeasible key {key}")
        self.levels[k][s] = float(value)

    def value(self, instance: Instance, key: SubInstanceKey) -> float:
        if instance is not self.instance and instance != self.instance:
            raise ValueError("value table is bound to a different instance")
        return self[key]

    def level_values(self, instance: Instance) -> list[np.ndarray]:
        if instance is not self.instance and instance != self.instance:
            raise ValueError("value table is bound to a different instance")
        return [a.copy() for a in self.levels]

    @property
    def root_value(self) -> float:
        return self[root_key(self.instance.n)]


# ---------------------------------------------------------------------------
# Residuals and deviation functionals
# ---------------------------------------------------------------------------


def delta_residual(value: Any, instance: Instance, key: SubInstanceKey) -> float:
    """One-step Bellman residual at a feasible key with k >= 1.

    ``max over feasible branches of (reward + V(child)) - V(key)``; exact
    maximum, no smoothing.  Raises ``InfeasibleError`` at infeasible keys.
    """
    if key.k < 1:
        raise ValueError("residual is defined for levels k >= 1")
    if not instance.feasible_key(key):
        raise InfeasibleError(f"residual requested at infeasible key {key}")
    fn = as_value_fn(value)
    outs = instance.transitions(key)
    best = max(o.reward + fn(instance, o.child) for o in outs)
    return best - fn(instance, key)


def deviation(value: Any, oracle: Any, key: SubInstanceKey, instance: Instance) -> float:
    """Signed deviation ``V*(key) - V(key)`` between an oracle and a value source."""
    vfn = as_value_fn(value)
    ofn = as_value_fn(oracle)
    return ofn(instance, key) - vfn(instance, key)


def deviation_abs(value: Any, oracle: Any, key: SubInstanceKey, instance: Instance) -> float:
    return abs(deviation(value, oracle, key, instance))


def psi_exact(value: Any, instance: Instance) -> float:
    """Sum of |delta| over every feasible key at levels 1..n (compensated).

    Definitional per-key implementation; ``engine.psi_from_levels`` is the
    fast equivalent used by ``verify_bound`` and training evals.
    """
    _check_guard(instance.n, TABLE_GUARD, "exact psi")
    fn = as_value_fn(value)
    terms = []
    for k in range(1, instance.n + 1):
        for s in range(1 << (instance.n - k)):
            key = key_from_suffix(instance.n, k, s)
            if instance.feasible_key(key):
                terms.append(abs(delta_residual(fn, instance, key)))
    return math.fsum(terms)


def phi_exact(
    value: Any, oracle: Any, instance: Instance, all_keys: bool = False
) -> float:
    """Deviation functional.

    Default is the root form ``|V(root) - V*(root)|``.  With
    ``all_keys=True`` it is the sum of ``|V* - V|`` over every feasible key
    at all levels 0..n instead (a strictly stronger quantity that is *not*
    bounded by psi in general).
    """
    if not all_keys:
        return deviation_abs(value, oracle, root_key(instance.n), instance)
    _check_guard(instance.n, TABLE_GUARD, "exact phi over all keys")
    terms = []
    for k in range(0, instance.n + 1):
        for s in range(1 << (instance.n - k)):
            key = key_from_suffix(instance.n, k, s)
            if instance.feasible_key(key):
                terms.append(deviation_abs(value, oracle, key, instance))
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    """Outcome of checking ``phi <= psi`` and the per-key telescoped bound."""

    phi: float
    psi: float
    holds: bool
    violations: list[dict] = field(default_factory=list)
    family: str = ""
    n: int = 0

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "phi": self.phi,
            "psi": self.psi,
            "holds": self.holds,
            "violations": self.violations,
        }


def verify_bound(
    instance: Instance,
    value: Any,
    tol: float = 1e-9,
    check_keys: bool = True,
) -> BoundReport:
    """Exactly check the deviation bound for one instance and value source.

    Builds the optimal table, evaluates the value source on every feasible
    key, computes exact phi (root form) and psi, and checks
    ``phi <= psi + tol * (1 + |psi|)``.  With ``check_keys`` it additionally
    checks, for every feasible key at levels 1..n, that the absolute
    deviation is bounded by the telescoped residual sum over the key's
    refinement sets; the first violated key (lowest level, then lowest
    suffix) is reported in ``violations``.

    Level-0 values are taken from the instance's level-0 sub-instance
    values: the bound presumes a pinned terminal level, and every value
    container in this package enforces that pinning.
    """
    from . import engine

    _check_guard(instance.n, TABLE_GUARD, "bound verification")
    ls = engine.build_levels(instance)
    opt = engine.optimal_levels(ls)
    vals = engine.value_levels(instance, value, ls)
    psi = engine.psi_from_levels(ls, vals)
    n = instance.n
    phi = abs(float(vals[n][0]) - float(opt[n][0]))
    holds = phi <= psi + tol * (1.0 + abs(psi))
    violations: list[dict] = []
    if check_keys:
        hit = engine.first_deviation_violation(ls, vals, opt, tol)
        if hit is not None:
            violations.append(hit)
    return BoundReport(
        phi=phi,
        psi=psi,
        holds=holds,
        violations=violations,
        family=getattr(instance, "family", ""),
        n=n,
    )
