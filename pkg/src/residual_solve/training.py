"""Self-supervised training of value models against their own residuals.

No solved instances are consumed anywhere: the loss is the sampled,
smoothed |one-step residual| of the current model on randomly drawn
sub-instances of freshly generated problems.  Sampling picks a level
uniformly from ``1..n`` and then a fixed suffix either uniformly at random
(rejecting infeasible keys) or from the keys the current model's own greedy
decode visits — the mixture keeps residuals trained where decoding actually
goes.

The loop is deterministic given the config seed: one seed sequence is split
into independent streams for parameter init, held-out eval instances, and
the live sampling stream, and checkpoints carry the live stream state so a
resumed run reproduces an uninterrupted one bit for bit.

At every eval point the exact residual sum (psi) and exact root deviation
(phi) are computed on the held-out set; ``phi <= psi`` is asserted each
time — a logged pair violating the bound would falsify the theory (or the
implementation) and aborts the run.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import engine
from .core import SubInstanceKey, key_from_suffix, root_key
from .decode import greedy_solve_batch
from .model import ValueModel, residual_loss_and_grad, save_checkpoint, load_checkpoint
from .problems import generate, make_params

__all__ = [
    "TrainConfig",
    "ResidualSample",
    "TrainResult",
    "DivergenceError",
    "TheoremViolationError",
    "METRICS_COLUMNS",
    "sample_batch",
    "eval_instances",
    "train",
    "write_metrics_csv",
    "read_metrics_csv",
]

METRICS_COLUMNS = [
    "step",
    "loss_ma",
    "psi_exact_eval",
    "phi_exact_eval",
    "decode_gap_mean",
    "alpha_max",
    "alpha_abs",
    "lr",
]


class DivergenceError(RuntimeError):
    """Training loss exploded past the configured multiple of its start."""


class TheoremViolationError(AssertionError):
    """An exact logged (phi, psi) pair violated the deviation bound."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs; serializable to/from JSON and TOML."""

    family: str = "knapsack_guarded"
    n: int = 10
    gen_params: dict = field(default_factory=dict)
    steps: int = 20000
    batch_size: int = 64
    lr: float = 3e-3
    lr_decay: float = 3e-4  # lr_t = lr / (1 + lr_decay * t)
    momentum: float = 0.0
    alpha_max_start: float = 1.0
    alpha_max_end: float = 50.0
    alpha_abs_start: float = 1.0
    alpha_abs_end: float = 50.0
    abs_kind: str = "tanh"
    loss_kind: str = "smoothed"
    decode_mix: float = 0.5
    hidden: tuple[int, ...] = (64, 64, 64)
    seed: int = 0
    eval_every: int = 500
    eval_size: int = 32
    n_eval: int | None = None  # held-out instance dimension; default n
    divergence_factor: float = 1e6
    max_retries: int = 64

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "gen_params", dict(self.gen_params))
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.decode_mix <= 1.0:
            raise ValueError("decode_mix must be in [0, 1]")
        if self.loss_kind not in ("smoothed", "exact"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if min(
            self.alpha_max_start,
            self.alpha_max_end,
            self.alpha_abs_start,
            self.alpha_abs_end,
        ) <= 0:
            raise ValueError("sharpness schedules must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        allowed = set(cls.__dataclass_fields__)
        bad = set(d) - allowed
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            with open(path, "rb") as fh:
                return cls.from_dict(tomllib.load(fh))
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def resolved_gen_params(self, n: int) -> object:
        p = dict(self.gen_params)
        p["n"] = n
        return make_params(self.family, p)


@dataclass(frozen=True)
class ResidualSample:
    """One training point: a feasible key of an instance, with its weight."""

    instance: Any
    key: SubInstanceKey
    weight: float

    def as_triple(self) -> tuple[Any, SubInstanceKey, float]:
        return (self.instance, self.key, self.weight)


@dataclass
class TrainResult:
    model: ValueModel
    metrics: list[dict]
    config: TrainConfig
    steps_done: int


def _interp_sharpness(start: float, end: float, t: int, steps: int) -> float:
    """Geometric interpolation from start to end over the step budget."""
    if steps <= 0:
        return end
    frac = min(max(t / steps, 0.0), 1.0)
    return float(start * (end / start) ** frac)


def sample_batch(
    draw: Callable[[np.random.Generator], Any],
    rng: np.random.Generator,
    count: int,
    model: ValueModel | None = None,
    decode_mix: float = 0.0,
    max_retries: int = 64,
) -> list[ResidualSample]:
    """Draw ``count`` residual samples at uniformly random levels.

    ``draw(rng)`` supplies an instance per sample.  The fixed suffix comes
    from the model's own greedy decode path with probability
    ``decode_mix`` (when a model is given), else uniformly at random with
    feasibility rejection: a handful of suffixes are tried per drawn level
    before the level itself is redrawn, up to ``max_retries`` total
    attempts.  Sample weight is ``instance.weight / count``.
    """
    picks = []
    decode_idx = []
    for i in range(count):
        inst = draw(rng)
        use_decode = (
            model is not None and decode_mix > 0.0 and rng.random() < decode_mix
        )
        k = int(rng.integers(1, inst.n + 1))
        picks.append([inst, k, None])
        if use_decode:
            decode_idx.append(i)
    if decode_idx:
        results = greedy_solve_batch(
            model, [picks[i][0] for i in decode_idx], keep_trace=True
        )
        for i, res in zip(decode_idx, results):
            inst, k, _ = picks[i]
            picks[i][2] = (
                root_key(inst.n) if k == inst.n else res.steps[inst.n - k].key
            )
    out = []
    for inst, k, key in picks:
        if key is None:
            key = _uniform_feasible_key(inst, k, rng, max_retries)
        out.append(ResidualSample(instance=inst, key=key, weight=inst.weight / count))
    return out


def _uniform_feasible_key(
    instance, k: int, rng: np.random.Generator, max_retries: int
) -> SubInstanceKey:
    n = instance.n
    attempts = 0
    while attempts < max_retries:
        for _ in range(8):
            attempts += 1
            s = int(rng.integers(0, 1 << (n - k))) if n > k else 0
            key = key_from_suffix(n, k, s)
            if instance.feasible_key(key):
                return key
            if attempts >= max_retries:
                break
        k = int(rng.integers(1, n + 1))  # level resampled after a bad streak
    raise RuntimeError(
        f"could not sample a feasible key after {max_retries} attempts"
    )


def eval_instances(config: TrainConfig) -> list:
    """The held-out evaluation set a run with this config scores against.

    Drawn from its own seed stream, so it never overlaps the live training
    draws regardless of step count.
    """
    _, eval_ss, _ = np.random.SeedSequence(config.seed).spawn(3)
    n_eval = config.n if config.n_eval is None else config.n_eval
    return generate(
        config.family,
        config.resolved_gen_params(n_eval),
        np.random.default_rng(eval_ss),
        config.eval_size,
    )


def _eval_metrics(model: ValueModel, eval_set: list, opt_cache: list) -> dict:
    """Exact psi/phi and decode gap on the held-out set; asserts phi <= psi."""
    psis, phis, gaps = [], [], []
    for inst, (ls, opt_levels, opt_root) in zip(eval_set, opt_cache):
        vals = engine.value_levels(inst, model, ls)
        psi = engine.psi_from_levels(ls, vals)
        phi = abs(float(vals[inst.n][0]) - opt_root)
        if phi > psi + 1e-9 * (1.0 + abs(psi)):
            raise TheoremViolationError(
                f"logged deviation {phi} exceeds residual sum {psi} "
                f"on a held-out {inst.family} instance"
            )
        res = greedy_solve_batch(model, [inst])[0]
        gaps.append((opt_root - res.objective) / max(abs(opt_root), 1e-12))
        psis.append(psi)
        phis.append(phi)
    return {
        "psi_exact_eval": float(np.mean(psis)),
        "phi_exact_eval": float(np.mean(phis)),
        "decode_gap_mean": float(np.mean(gaps)),
    }


def train(
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    stop_after: int | None = None,
) -> TrainResult:
    """Run (or resume) a training loop; returns the model and metrics rows.

    With ``out_dir`` set, writes ``checkpoint.json`` and ``metrics.csv``
    there at the end.  ``stop_after`` interrupts the run at that step while
    keeping every schedule pinned to the full ``config.steps`` budget, so a
    stopped-and-resumed run reproduces the uninterrupted one bit for bit.
    """
    root_ss = np.random.SeedSequence(config.seed)
    init_ss, _, live_ss = root_ss.spawn(3)

    eval_set = eval_instances(config)
    opt_cache = []
    for inst in eval_set:
        ls = engine.build_levels(inst)
        opt_levels = engine.optimal_levels(ls)
        opt_cache.append((ls, opt_levels, engine.root_value(opt_levels)))

    rng = np.random.default_rng(live_ss)
    gen_params = config.resolved_gen_params(config.n)

    def draw(r: np.random.Generator):
        return generate(config.family, gen_params, r, 1)[0]

    metrics: list[dict] = []
    window: deque = deque(maxlen=max(config.eval_every, 1))
    start_step = 0
    divergence_ref = None

    if resume_from is not None:
        model, extra = load_checkpoint(resume_from)
        saved = dict(extra.get("config", {}))
        current = config.to_json_dict()
        drift = {
            k
            for k in current
            if k != "steps" and saved.get(k) != current[k]
        }
        if drift:
            raise ValueError(
                f"resume config differs from checkpoint in {sorted(drift)}"
            )
        start_step = int(extra["step"])
        rng.bit_generator.state = extra["rng_state"]
        window.extend(extra.get("loss_window", []))
        divergence_ref = extra.get("divergence_ref")
        metrics = list(extra.get("metrics", []))
        velocity = np.array(extra.get("velocity", np.zeros_like(model.theta)))
    else:
        model = ValueModel.initialize(
            config.family,
            np.random.default_rng(init_ss),
            hidden=config.hidden,
            alpha_max=config.alpha_max_start,
            alpha_abs=config.alpha_abs_start,
            abs_kind=config.abs_kind,
        )
        velocity = np.zeros_like(model.theta)

    def log_row(step: int, lr: float) -> None:
        if window:
            loss_ma = float(np.mean(window))
        else:
            probe = sample_batch(
                draw,
                rng,
                config.batch_size,
                model=model,
                decode_mix=config.decode_mix,
                max_retries=config.max_retries,
            )
            loss_ma, _ = residual_loss_and_grad(
                model,
                [s.as_triple() for s in probe],
                kind=config.loss_kind,
            )
        row = {
            "step": step,
            "loss_ma": loss_ma,
            "alpha_max": model.alpha_max,
            "alpha_abs": model.alpha_abs,
            "lr": lr,
        }
        row.update(_eval_metrics(model, eval_set, opt_cache))
        metrics.append({c: row[c] for c in METRICS_COLUMNS})

    stop = config.steps if stop_after is None else min(stop_after, config.steps)
    stop = max(stop, start_step)
    for step in range(start_step, stop + 1):
        model.alpha_max = _interp_sharpness(
            config.alpha_max_start, config.alpha_max_end, step, config.steps
        )
        model.alpha_abs = _interp_sharpness(
            config.alpha_abs_start, config.alpha_abs_end, step, config.steps
        )
        lr = config.lr / (1.0 + config.lr_decay * step)
        already_logged = bool(metrics) and metrics[-1]["step"] == step
        if (
            step % max(config.eval_every, 1) == 0 or step == stop
        ) and not already_logged:
            log_row(step, lr)
        if step == stop:
            break
        batch = sample_batch(
            draw,
            rng,
            config.batch_size,
            model=model,
            decode_mix=config.decode_mix,
            max_retries=config.max_retries,
        )
        loss, grad = residual_loss_and_grad(
            model, [s.as_triple() for s in batch], kind=config.loss_kind
        )
        if divergence_ref is None:
            divergence_ref = max(loss, 1e-12)
        if loss > config.divergence_factor * divergence_ref:
            raise DivergenceError(
                f"loss {loss:.3g} at step {step} exceeds "
                f"{config.divergence_factor:g} x initial {divergence_ref:.3g}"
            )
        if config.momentum:
            velocity *= config.momentum
            velocity -= lr * grad
            model.theta += velocity
        else:
            model.theta -= lr * grad
        window.append(loss)

    result = TrainResult(
        model=model, metrics=metrics, config=config, steps_done=stop
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        extra = {
            "step": stop,
            "rng_state": rng.bit_generator.state,
            "loss_window": list(window),
            "divergence_ref": divergence_ref,
            "metrics": metrics,
            "config": config.to_json_dict(),
        }
        if config.momentum:
            extra["velocity"] = velocity.tolist()
        save_checkpoint(out_dir / "checkpoint.json", model, extra)
        write_metrics_csv(out_dir / "metrics.csv", metrics)
    return result


def write_metrics_csv(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: repr(row[c]) if isinstance(row[c], float) else row[c] for c in METRICS_COLUMNS})


def read_metrics_csv(path: str | Path) -> list[dict]:
    out = []
    with open(path) as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    c: (int(row[c]) if c == "step" else float(row[c]))
                    for c in METRICS_COLUMNS
                }
            )
    return out
