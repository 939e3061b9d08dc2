"""Sequential decoding: turn a value source into a concrete assignment.

Starting at the root, repeatedly score the feasible branches of the current
key by ``reward + V(child)`` and fix the variable to the best branch (ties
go to the 0-branch), until a full assignment remains.  With the exact
oracle as the value source this is optimal; with a trained model it is the
solver's primary output.  ``evaluate_gap`` measures decoded objectives
against the exact optimum, alongside a uniform-random-policy baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from . import oracle as oracle_mod
from .core import InfeasibleError, SubInstanceKey, as_value_fn, root_key

__all__ = [
    "DecodeStep",
    "DecodeResult",
    "GapReport",
    "greedy_solve",
    "greedy_solve_batch",
    "random_solve",
    "evaluate_gap",
]


@dataclass(frozen=True)
class DecodeStep:
    """One fixing decision: the key before it, branch bits/scores, chosen bit."""

    key: SubInstanceKey
    bits: tuple[int, ...]
    scores: tuple[float, ...]
    chosen: int


@dataclass
class DecodeResult:
    assignment: tuple[int, ...]
    objective: float
    feasible: bool
    steps: list[DecodeStep] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "assignment": list(self.assignment),
            "objective": self.objective,
            "feasible": self.feasible,
        }


def _values_rows(source: Any, rows: Sequence[tuple[Any, SubInstanceKey]]) -> np.ndarray:
    if hasattr(source, "values_rows"):
        return np.asarray(source.values_rows(rows), dtype=float)
    fn = as_value_fn(source)
    return np.array([fn(inst, key) for inst, key in rows], dtype=float)


def greedy_solve(source: Any, instance, keep_trace: bool = True) -> DecodeResult:
    """Decode one instance by sequential greedy fixing under a value source."""
    results = greedy_solve_batch(source, [instance], keep_trace=keep_trace)
    return results[0]


def greedy_solve_batch(
    source: Any, instances: Sequence[Any], keep_trace: bool = False
) -> list[DecodeResult]:
    """Decode several same-dimension instances in lockstep.

    All branch evaluations of one level go through a single batched value
    query, which is what makes model-guided decoding cheap inside the
    training loop.  Results are identical to per-instance ``greedy_solve``.
    """
    if not instances:
        return []
    n = instances[0].n
    if any(inst.n != n for inst in instances):
        raise ValueError("batch decoding requires instances of equal dimension")
    keys = []
    for inst in instances:
        root = root_key(n)
        if not inst.feasible_key(root):
            raise InfeasibleError("instance has no feasible assignment")
        keys.append(root)
    traces: list[list[DecodeStep]] = [[] for _ in instances]
    for k in range(n, 0, -1):
        all_outs = [inst.transitions(key) for inst, key in zip(instances, keys)]
        rows = [
            (inst, o.child)
            for inst, outs in zip(instances, all_outs)
            for o in outs
        ]
        child_vals = _values_rows(source, rows)
        ofs = 0
        for i, (inst, outs) in enumerate(zip(instances, all_outs)):
            scores = [
                o.reward + child_vals[ofs + j] for j, o in enumerate(outs)
            ]
            ofs += len(outs)
            best = 0
            for j in range(1, len(scores)):
                if scores[j] > scores[best]:
                    best = j
            if keep_trace:
                traces[i].append(
                    DecodeStep(
                        key=keys[i],
                        bits=tuple(o.bit for o in outs),
                        scores=tuple(float(s) for s in scores),
                        chosen=outs[best].bit,
                    )
                )
            keys[i] = outs[best].child
    out = []
    for inst, key, trace in zip(instances, keys, traces):
        x = key.xi
        out.append(
            DecodeResult(
                assignment=x,
                objective=inst.terminal_value(x),
                feasible=inst.feasible_assignment(x),
                steps=trace,
            )
        )
    return out


def random_solve(instance, rng: np.random.Generator) -> DecodeResult:
    """Uniform-random feasible fixing; the no-learning decode baseline."""
    n = instance.n
    key = root_key(n)
    if not instance.feasible_key(key):
        raise InfeasibleError("instance has no feasible assignment")
    for _ in range(n, 0, -1):
        outs = instance.transitions(key)
        key = outs[int(rng.integers(len(outs)))].child
    x = key.xi
    return DecodeResult(
        assignment=x,
        objective=instance.terminal_value(x),
        feasible=instance.feasible_assignment(x),
    )


@dataclass
class GapReport:
    """Per-instance decoded objectives vs the exact optimum."""

    items: list[dict]
    mean_gap: float
    mean_baseline_gap: float

    def to_json_dict(self) -> dict:
        return {
            "mean_gap": self.mean_gap,
            "mean_baseline_gap": self.mean_baseline_gap,
            "items": self.items,
        }


def _relative_gap(optimal: float, achieved: float) -> float:
    return (optimal - achieved) / max(abs(optimal), 1e-12)


def evaluate_gap(
    source: Any,
    instances: Sequence[Any],
    rng: np.random.Generator | None = None,
    baseline_samples: int = 1,
) -> GapReport:
    """Relative optimality gaps of greedy decoding over a batch.

    Gap of an instance is ``(optimum - decoded) / max(|optimum|, 1e-12)``;
    the optimum comes from the exact sweep (enumeration-guarded).  The
    baseline column decodes with a uniform random policy,
    ``baseline_samples`` times per instance (0 disables it).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    items = []
    gaps = []
    base_gaps = []
    for inst in instances:
        opt = oracle_mod.optimal_root(inst)
        res = greedy_solve(source, inst, keep_trace=False)
        gap = _relative_gap(opt, res.objective)
        row = {
            "family": inst.family,
            "n": inst.n,
            "optimal": opt,
            "decoded": res.objective,
            "gap": gap,
        }
        if baseline_samples > 0:
            bvals = [
                random_solve(inst, rng).objective for _ in range(baseline_samples)
            ]
            bgap = float(np.mean([_relative_gap(opt, v) for v in bvals]))
            row["baseline_decoded"] = float(np.mean(bvals))
            row["baseline_gap"] = bgap
            base_gaps.append(bgap)
        gaps.append(gap)
        items.append(row)
    return GapReport(
        items=items,
        mean_gap=float(np.mean(gaps)) if gaps else 0.0,
        mean_baseline_gap=float(np.mean(base_gaps)) if base_gaps else float("nan"),
    )
