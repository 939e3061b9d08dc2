"""Command-line interface.

Subcommands::

    gen           draw instances from a family generator -> JSONL (+ CSV)
    train         self-supervised training -> checkpoint.json + metrics.csv
    solve         greedy-decode instances under a value source
    eval          decoded objectives vs exact optima (+ random baseline)
    oracle        exact optimal root value / full optimal table
    verify-bound  exact deviation-bound check per instance

Exit codes: 0 success, 1 bad usage or invalid parameters, 2 enumeration
guard exceeded, 3 bound verification found a violation.

Every command writes a ``*.manifest.json`` sidecar (or ``manifest.json``
inside its output directory) recording the resolved arguments, seeds, input
digests, and outputs, so any artifact can be regenerated by re-running the
recorded argv.  ``--threads`` (default from ``RESIDUAL_SOLVE_THREADS``)
parallelizes per-instance work in ``eval`` and ``verify-bound``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, engine
from .core import GuardExceededError, ValueTable, ZeroValue, verify_bound
from .decode import GapReport, evaluate_gap, greedy_solve
from .model import load_checkpoint
from .oracle import build_table, optimal_root
from .problems import generate, make_params, read_instances, write_csv, write_instances
from .training import TrainConfig, train

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_GUARD = 2
EXIT_VIOLATION = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through exit code 1
        raise _UsageError(message)


def _default_threads() -> int:
    raw = os.environ.get("RESIDUAL_SOLVE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise _UsageError(f"RESIDUAL_SOLVE_THREADS must be an integer, got {raw!r}")


def _parallel_map(fn, items, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(
    target: Path,
    command: str,
    argv: list[str],
    resolved: dict,
    inputs: list[Path],
    outputs: list[Path],
    elapsed: float,
) -> None:
    manifest = {
        "tool": "residual-solve",
        "version": __version__,
        "backend": engine.backend_name(),
        "command": command,
        "argv": argv,
        "resolved": resolved,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "elapsed_seconds": elapsed,
    }
    with open(target, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _manifest_path(out: Path) -> Path:
    if out.is_dir():
        return out / "manifest.json"
    return out.with_name(out.name + ".manifest.json")


# ---------------------------------------------------------------------------
# Value sources
# ---------------------------------------------------------------------------


def _make_source(name: str, seed: int):
    """Value-source factory: returns ``fn(instance, index) -> source``.

    ``zero``   — the all-zero pinned value map;
    ``oracle`` — exact optimal table per instance;
    ``random`` — per-instance random table (seeded, magnitude-scaled);
    anything else is treated as a checkpoint path.
    """
    if name == "zero":
        zero = ZeroValue()
        return lambda inst, i: zero
    if name == "oracle":
        return lambda inst, i: build_table(inst)
    if name == "random":
        root = np.random.SeedSequence(seed)

        def make_random(inst, i):
            rng = np.random.default_rng(root.spawn(i + 1)[-1])
            return ValueTable.random(inst, rng, scale=inst.value_scale())

        return make_random
    model, _ = load_checkpoint(name)
    return lambda inst, i: model


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_gen(args, argv) -> int:
    t0 = time.monotonic()
    params = dict(json.loads(args.params))
    if args.n is not None:
        params["n"] = args.n
    resolved = make_params(args.family, params)
    rng = np.random.default_rng(args.seed)
    instances = generate(args.family, resolved, rng, args.count)
    out = Path(args.out)
    write_instances(out, instances)
    outputs = [out]
    if args.csv:
        write_csv(args.csv, instances)
        outputs.append(Path(args.csv))
    _write_manifest(
        _manifest_path(out),
        "gen",
        argv,
        {
            "family": args.family,
            "params": resolved.__dict__,
            "count": args.count,
            "seed": args.seed,
        },
        [],
        outputs,
        time.monotonic() - t0,
    )
    print(f"wrote {len(instances)} {args.family} instances to {out}")
    return EXIT_OK


def _parse_override(text: str) -> tuple[str, object]:
    if "=" not in text:
        raise _UsageError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _cmd_train(args, argv) -> int:
    t0 = time.monotonic()
    if args.config:
        config = TrainConfig.from_file(args.config)
    else:
        config = TrainConfig()
    overrides = dict(_parse_override(s) for s in args.set or [])
    if overrides:
        merged = config.to_json_dict()
        merged.update(overrides)
        config = TrainConfig.from_dict(merged)
    out_dir = Path(args.out)
    result = train(
        config,
        out_dir=out_dir,
        resume_from=args.resume,
        stop_after=args.stop_after,
    )
    final = result.metrics[-1]
    inputs = [Path(p) for p in (args.config, args.resume) if p]
    _write_manifest(
        _manifest_path(out_dir),
        "train",
        argv,
        {"config": config.to_json_dict()},
        inputs,
        [out_dir / "checkpoint.json", out_dir / "metrics.csv"],
        time.monotonic() - t0,
    )
    print(
        f"trained {config.family} for {result.steps_done} steps: "
        f"loss {final['loss_ma']:.4g}, psi {final['psi_exact_eval']:.4g}, "
        f"phi {final['phi_exact_eval']:.4g}, gap {final['decode_gap_mean']:.4g}"
    )
    return EXIT_OK


def _cmd_solve(args, argv) -> int:
    t0 = time.monotonic()
    instances = read_instances(args.instances)
    source_of = _make_source(args.values, args.seed)
    rows = []
    for i, inst in enumerate(instances):
        res = greedy_solve(source_of(inst, i), inst, keep_trace=args.trace)
        row = {"index": i, "family": inst.family, "n": inst.n}
        row.update(res.to_json_dict())
        if args.trace:
            row["trace"] = [
                {
                    "k": st.key.k,
                    "xi": "".join(str(b) for b in st.key.xi),
                    "bits": list(st.bits),
                    "scores": list(st.scores),
                    "chosen": st.chosen,
                }
                for st in res.steps
            ]
        rows.append(row)
    lines = "".join(json.dumps(r) + "\n" for r in rows)
    if args.out:
        out = Path(args.out)
        out.write_text(lines)
        _write_manifest(
            _manifest_path(out),
            "solve",
            argv,
            {"values": args.values, "trace": args.trace, "seed": args.seed},
            [Path(args.instances)],
            [out],
            time.monotonic() - t0,
        )
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def _merge_gap_reports(reports: list[GapReport]) -> GapReport:
    items = [item for rep in reports for item in rep.items]
    gaps = [item["gap"] for item in items]
    bgaps = [item["baseline_gap"] for item in items if "baseline_gap" in item]
    return GapReport(
        items=items,
        mean_gap=float(np.mean(gaps)) if gaps else 0.0,
        mean_baseline_gap=float(np.mean(bgaps)) if bgaps else float("nan"),
    )


def _cmd_eval(args, argv) -> int:
    t0 = time.monotonic()
    instances = read_instances(args.instances)
    source_of = _make_source(args.values, args.seed)
    seeds = np.random.SeedSequence(args.seed).spawn(max(len(instances), 1))

    def one(pair):
        i, inst = pair
        return evaluate_gap(
            source_of(inst, i),
            [inst],
            rng=np.random.default_rng(seeds[i]),
            baseline_samples=args.baseline_samples,
        )

    reports = _parallel_map(one, list(enumerate(instances)), args.threads)
    report = _merge_gap_reports(reports)
    outputs = []
    if args.out:
        out = Path(args.out)
        with open(out, "w") as fh:
            json.dump(report.to_json_dict(), fh, indent=2)
            fh.write("\n")
        outputs.append(out)
        _write_manifest(
            _manifest_path(out),
            "eval",
            argv,
            {
                "values": args.values,
                "seed": args.seed,
                "baseline_samples": args.baseline_samples,
            },
            [Path(args.instances)],
            outputs,
            time.monotonic() - t0,
        )
    print(
        f"evaluated {len(instances)} instances: mean gap {report.mean_gap:.4g}, "
        f"baseline {report.mean_baseline_gap:.4g}"
    )
    return EXIT_OK


def _cmd_oracle(args, argv) -> int:
    t0 = time.monotonic()
    instances = read_instances(args.instances)
    if not 0 <= args.index < len(instances):
        raise _UsageError(
            f"--index {args.index} out of range for {len(instances)} instances"
        )
    inst = instances[args.index]
    if args.table:
        table = build_table(inst)
        root = table.root_value
        out = Path(args.table)
        with open(out, "w") as fh:
            json.dump(table.to_json_dict(), fh)
            fh.write("\n")
        _write_manifest(
            _manifest_path(out),
            "oracle",
            argv,
            {"index": args.index},
            [Path(args.instances)],
            [out],
            time.monotonic() - t0,
        )
    else:
        root = optimal_root(inst)
    print(f"optimal value: {root!r}")
    return EXIT_OK


def _cmd_verify_bound(args, argv) -> int:
    t0 = time.monotonic()
    instances = read_instances(args.instances)
    source_of = _make_source(args.values, args.seed)

    def one(pair):
        i, inst = pair
        return verify_bound(
            inst, source_of(inst, i), tol=args.tol, check_keys=not args.no_key_check
        )

    reports = _parallel_map(one, list(enumerate(instances)), args.threads)
    outputs = []
    if args.out:
        out = Path(args.out)
        with open(out, "w") as fh:
            for rep in reports:
                fh.write(json.dumps(rep.to_json_dict()) + "\n")
        outputs.append(out)
        _write_manifest(
            _manifest_path(out),
            "verify-bound",
            argv,
            {"values": args.values, "seed": args.seed, "tol": args.tol},
            [Path(args.instances)],
            outputs,
            time.monotonic() - t0,
        )
    bad = [
        i
        for i, rep in enumerate(reports)
        if not rep.holds or rep.violations
    ]
    if bad:
        print(
            f"bound violated on {len(bad)} of {len(reports)} instances "
            f"(first at index {bad[0]})",
            file=sys.stderr,
        )
        return EXIT_VIOLATION
    print(f"bound verified on {len(reports)} instances")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="residual-solve", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate instances")
    p.add_argument("--family", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="override params n")
    p.add_argument("--params", default="{}", help="family params as JSON")
    p.add_argument("--csv", default=None, help="also export a CSV table")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a value model")
    p.add_argument("--config", default=None, help="JSON or TOML config file")
    p.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override a config field (JSON-parsed value)",
    )
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument(
        "--stop-after",
        type=int,
        default=None,
        help="checkpoint and stop at this step, keeping the full-budget schedules",
    )
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("solve", help="greedy-decode instances")
    p.add_argument("--instances", required=True)
    p.add_argument(
        "--values",
        required=True,
        help="zero | oracle | random | checkpoint path",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="JSONL output (default stdout)")
    p.add_argument("--trace", action="store_true", help="include decode traces")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("eval", help="decode gaps vs exact optimum")
    p.add_argument("--instances", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--baseline-samples", type=int, default=1)
    p.add_argument("--out", default=None, help="JSON report path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("oracle", help="exact optimum of one instance")
    p.add_argument("--instances", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--table", default=None, help="dump the full optimal table (JSON)")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("verify-bound", help="check phi <= psi exactly")
    p.add_argument("--instances", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--no-key-check", action="store_true")
    p.add_argument("--out", default=None, help="JSONL report path")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_verify_bound)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is None and hasattr(args, "threads"):
            args.threads = _default_threads()
        return args.func(args, argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GuardExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (ValueError, TypeError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
