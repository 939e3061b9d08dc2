"""residual-solve: value-function solver for binary problems, trained on its
own dynamic-programming residuals and exactly verifiable on small instances.

Quick tour::

    from residual_solve import problems, oracle, training, decode
    import numpy as np

    inst = problems.KnapsackGuarded(c=(3, 5, 4), a=(2, 4, 3), b=6)
    table = oracle.build_table(inst)          # exact values, every sub-instance
    result = decode.greedy_solve(table, inst) # optimal assignment
    cfg = training.TrainConfig(family="knapsack_guarded", n=10, steps=2000)
    run = training.train(cfg)                 # self-supervised model

The ``residual-solve`` console script wraps generation, training, solving,
evaluation, oracles, and bound verification; see README.md and formats.md.
"""

from .core import (
    BoundReport,
    GuardExceededError,
    InfeasibleError,
    SubInstanceKey,
    TransitionOutcome,
    ValueTable,
    ZeroValue,
    delta_residual,
    deviation,
    deviation_abs,
    enumerate_keys,
    enumerate_xi_set,
    make_key,
    phi_exact,
    psi_exact,
    root_key,
    verify_bound,
)
from .decode import DecodeResult, GapReport, evaluate_gap, greedy_solve, random_solve
from .model import ValueModel, load_checkpoint, save_checkpoint
from .oracle import OracleTable, brute_force_root, build_table, dp_knapsack_integer
from .problems import FAMILIES, generate, read_instances, write_instances
from .training import TrainConfig, TrainResult, sample_batch, train

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BoundReport",
    "DecodeResult",
    "FAMILIES",
    "GapReport",
    "GuardExceededError",
    "InfeasibleError",
    "OracleTable",
    "SubInstanceKey",
    "TrainConfig",
    "TrainResult",
    "TransitionOutcome",
    "ValueModel",
    "ValueTable",
    "ZeroValue",
    "brute_force_root",
    "build_table",
    "delta_residual",
    "deviation",
    "deviation_abs",
    "dp_knapsack_integer",
    "enumerate_keys",
    "enumerate_xi_set",
    "evaluate_gap",
    "generate",
    "greedy_solve",
    "load_checkpoint",
    "make_key",
    "phi_exact",
    "psi_exact",
    "random_solve",
    "read_instances",
    "root_key",
    "sample_batch",
    "save_checkpoint",
    "train",
    "verify_bound",
    "write_instances",
]
