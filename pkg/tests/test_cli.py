"""End-to-end CLI coverage: every subcommand, exit codes, manifests."""

import json
import hashlib

import pytest

from residual_solve import cli
from residual_solve.oracle import optimal_root
from residual_solve.problems import read_instances

TRAIN_SET = [
    "--set", "family=knapsack_guarded",
    "--set", "n=4",
    "--set", "steps=6",
    "--set", "eval_every=3",
    "--set", "batch_size=4",
    "--set", "eval_size=2",
    "--set", "hidden=[8]",
    "--set", "seed=1",
]


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def instance_file(tmp_path, capsys):
    path = tmp_path / "inst.jsonl"
    code = cli.main(
        ["gen", "--family", "knapsack_guarded", "--count", "3",
         "--n", "4", "--seed", "7", "--out", str(path)]
    )
    capsys.readouterr()
    assert code == 0
    return path


# ------------------------------------------------------------------- gen


def test_gen_writes_instances_csv_and_manifest(tmp_path, capsys):
    out = tmp_path / "cut.jsonl"
    csv_out = tmp_path / "cut.csv"
    code, stdout, _ = run(
        ["gen", "--family", "max_cut", "--count", "2", "--n", "5",
         "--seed", "3", "--out", str(out), "--csv", str(csv_out)],
        capsys,
    )
    assert code == 0
    assert "wrote 2 max_cut instances" in stdout

    instances = read_instances(out)
    assert len(instances) == 2 and all(i.n == 5 for i in instances)
    assert csv_out.read_text().splitlines()[0].startswith("family,n")

    manifest = json.loads((tmp_path / "cut.jsonl.manifest.json").read_text())
    assert manifest["tool"] == "residual-solve"
    assert manifest["command"] == "gen"
    assert manifest["resolved"]["count"] == 2
    assert str(out) in manifest["outputs"]
    assert manifest["backend"] in ("numpy", "cython")


def test_gen_manifest_argv_reproduces_output(tmp_path, capsys):
    out = tmp_path / "a.jsonl"
    run(["gen", "--family", "max_sat", "--count", "4", "--n", "5",
         "--seed", "11", "--out", str(out)], capsys)
    first = out.read_bytes()

    manifest = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    code, _, _ = run(manifest["argv"], capsys)
    assert code == 0
    assert out.read_bytes() == first
    digest = hashlib.sha256(first).hexdigest()
    again = json.loads((tmp_path / "a.jsonl.manifest.json").read_text())
    assert again["outputs"] == [str(out)]
    # the replayed manifest carries the same argv it was born from
    assert again["argv"] == manifest["argv"]
    assert digest == hashlib.sha256(out.read_bytes()).hexdigest()


def test_gen_params_json(tmp_path, capsys):
    out = tmp_path / "sat.jsonl"
    code, _, _ = run(
        ["gen", "--family", "max_sat", "--count", "1", "--n", "6",
         "--params", '{"m": 9}', "--out", str(out)],
        capsys,
    )
    assert code == 0
    assert len(read_instances(out)[0].clauses) == 9


def test_gen_unknown_family_exits_1(tmp_path, capsys):
    code, _, err = run(
        ["gen", "--family", "nope", "--count", "1", "--out",
         str(tmp_path / "x.jsonl")],
        capsys,
    )
    assert code == 1
    assert "error:" in err


def test_gen_bad_params_json_exits_1(tmp_path, capsys):
    code, _, err = run(
        ["gen", "--family", "max_cut", "--count", "1",
         "--params", "{oops", "--out", str(tmp_path / "x.jsonl")],
        capsys,
    )
    assert code == 1 and "error:" in err


def test_missing_required_argument_exits_1(capsys):
    code, _, err = run(["gen", "--count", "1"], capsys)
    assert code == 1 and "error:" in err


def test_unknown_subcommand_exits_1(capsys):
    code, _, err = run(["frobnicate"], capsys)
    assert code == 1 and "error:" in err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0


# ----------------------------------------------------------------- train


def test_train_solve_eval_round_trip(tmp_path, capsys):
    run_dir = tmp_path / "run"
    code, stdout, _ = run(["train", "--out", str(run_dir)] + TRAIN_SET, capsys)
    assert code == 0
    assert "trained knapsack_guarded for 6 steps" in stdout
    assert (run_dir / "checkpoint.json").exists()
    assert (run_dir / "metrics.csv").exists()
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["resolved"]["config"]["steps"] == 6

    inst = tmp_path / "inst.jsonl"
    run(["gen", "--family", "knapsack_guarded", "--count", "2", "--n", "4",
         "--seed", "5", "--out", str(inst)], capsys)

    solved = tmp_path / "solved.jsonl"
    code, _, _ = run(
        ["solve", "--instances", str(inst), "--values",
         str(run_dir / "checkpoint.json"), "--out", str(solved)],
        capsys,
    )
    assert code == 0
    rows = [json.loads(line) for line in solved.read_text().splitlines()]
    assert len(rows) == 2
    for row in rows:
        assert row["feasible"] is True
        assert len(row["assignment"]) == 4

    code, stdout, _ = run(
        ["eval", "--instances", str(inst), "--values",
         str(run_dir / "checkpoint.json"), "--baseline-samples", "2"],
        capsys,
    )
    assert code == 0
    assert "evaluated 2 instances" in stdout


def test_train_config_file_and_set_precedence(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.toml"
    cfg_path.write_text(
        'family = "knapsack_guarded"\nn = 4\nsteps = 4\nbatch_size = 4\n'
        "eval_every = 2\neval_size = 2\nhidden = [8]\nlr = 0.5\n"
    )
    run_dir = tmp_path / "run"
    code, _, _ = run(
        ["train", "--config", str(cfg_path), "--set", "lr=0.001",
         "--out", str(run_dir)],
        capsys,
    )
    assert code == 0
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["resolved"]["config"]["lr"] == 0.001
    assert str(cfg_path) in manifest["inputs"]  # input digest recorded


def test_train_stop_after_and_resume(tmp_path, capsys):
    full_dir = tmp_path / "full"
    run(["train", "--out", str(full_dir)] + TRAIN_SET, capsys)

    part_dir = tmp_path / "part"
    code, stdout, _ = run(
        ["train", "--out", str(part_dir), "--stop-after", "3"] + TRAIN_SET,
        capsys,
    )
    assert code == 0
    assert "for 3 steps" in stdout

    resumed_dir = tmp_path / "resumed"
    code, stdout, _ = run(
        ["train", "--out", str(resumed_dir),
         "--resume", str(part_dir / "checkpoint.json")] + TRAIN_SET,
        capsys,
    )
    assert code == 0
    ckpt_full = json.loads((full_dir / "checkpoint.json").read_text())
    ckpt_resumed = json.loads((resumed_dir / "checkpoint.json").read_text())
    assert ckpt_resumed["theta"] == ckpt_full["theta"]
    assert (resumed_dir / "metrics.csv").read_text() == (
        full_dir / "metrics.csv"
    ).read_text()


def test_train_bad_set_exits_1(tmp_path, capsys):
    code, _, err = run(
        ["train", "--out", str(tmp_path / "d"), "--set", "learning"], capsys
    )
    assert code == 1 and "key=value" in err


# ----------------------------------------------------------------- solve


def test_solve_stdout_and_trace(instance_file, capsys):
    code, stdout, _ = run(
        ["solve", "--instances", str(instance_file), "--values", "zero",
         "--trace"],
        capsys,
    )
    assert code == 0
    rows = [json.loads(line) for line in stdout.splitlines()]
    assert len(rows) == 3
    trace = rows[0]["trace"]
    assert len(trace) == 4  # one decision per variable
    # xi strings are full-length with free positions zeroed, as in table dumps
    assert trace[0]["k"] == 4 and trace[0]["xi"] == "0000"
    assert trace[-1]["k"] == 1
    assert set(trace[0]) == {"k", "xi", "bits", "scores", "chosen"}


def test_solve_oracle_matches_optimal_root(instance_file, capsys):
    code, stdout, _ = run(
        ["solve", "--instances", str(instance_file), "--values", "oracle"],
        capsys,
    )
    assert code == 0
    rows = [json.loads(line) for line in stdout.splitlines()]
    for row, inst in zip(rows, read_instances(instance_file)):
        assert row["objective"] == pytest.approx(optimal_root(inst))


def test_solve_missing_file_exits_1(capsys):
    code, _, err = run(
        ["solve", "--instances", "/nonexistent.jsonl", "--values", "zero"],
        capsys,
    )
    assert code == 1 and "error:" in err


# ------------------------------------------------------------------ eval


def test_eval_oracle_gap_zero_with_report(instance_file, tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code, stdout, _ = run(
        ["eval", "--instances", str(instance_file), "--values", "oracle",
         "--baseline-samples", "3", "--out", str(report_path)],
        capsys,
    )
    assert code == 0
    report = json.loads(report_path.read_text())
    assert report["mean_gap"] == pytest.approx(0.0, abs=1e-9)
    assert len(report["items"]) == 3
    assert report["mean_baseline_gap"] >= -1e-9
    assert (tmp_path / "report.json.manifest.json").exists()


def test_eval_threads_match_serial(instance_file, tmp_path, capsys):
    out1 = tmp_path / "t1.json"
    out2 = tmp_path / "t2.json"
    run(["eval", "--instances", str(instance_file), "--values", "random",
         "--seed", "9", "--out", str(out1), "--threads", "1"], capsys)
    run(["eval", "--instances", str(instance_file), "--values", "random",
         "--seed", "9", "--out", str(out2), "--threads", "3"], capsys)
    assert json.loads(out1.read_text()) == json.loads(out2.read_text())


def test_threads_env_default_invalid_exits_1(instance_file, capsys, monkeypatch):
    monkeypatch.setenv("RESIDUAL_SOLVE_THREADS", "many")
    code, _, err = run(
        ["eval", "--instances", str(instance_file), "--values", "zero"],
        capsys,
    )
    assert code == 1 and "RESIDUAL_SOLVE_THREADS" in err


# ---------------------------------------------------------------- oracle


def test_oracle_prints_root_and_dumps_table(instance_file, tmp_path, capsys):
    code, stdout, _ = run(
        ["oracle", "--instances", str(instance_file), "--index", "1"], capsys
    )
    assert code == 0
    printed = float(stdout.split(":")[1])
    assert printed == optimal_root(read_instances(instance_file)[1])

    table_path = tmp_path / "table.json"
    code, _, _ = run(
        ["oracle", "--instances", str(instance_file), "--index", "1",
         "--table", str(table_path)],
        capsys,
    )
    assert code == 0
    table = json.loads(table_path.read_text())
    roots = [e for e in table["entries"] if e["k"] == 4]
    assert len(roots) == 1 and roots[0]["value"] == printed


def test_oracle_index_out_of_range_exits_1(instance_file, capsys):
    code, _, err = run(
        ["oracle", "--instances", str(instance_file), "--index", "9"], capsys
    )
    assert code == 1 and "out of range" in err


def test_oracle_guard_exits_2(tmp_path, capsys):
    big = tmp_path / "big.jsonl"
    # generation has no size guard; exact work on the instance does
    code, _, _ = run(
        ["gen", "--family", "max_cut", "--count", "1", "--n", "21",
         "--out", str(big)],
        capsys,
    )
    assert code == 0
    code, _, err = run(["oracle", "--instances", str(big)], capsys)
    assert code == 2 and "error:" in err


# ---------------------------------------------------------- verify-bound


def test_verify_bound_ok_and_report(instance_file, tmp_path, capsys):
    out = tmp_path / "bound.jsonl"
    code, stdout, _ = run(
        ["verify-bound", "--instances", str(instance_file), "--values",
         "random", "--seed", "4", "--out", str(out), "--threads", "2"],
        capsys,
    )
    assert code == 0
    assert "bound verified on 3 instances" in stdout
    reports = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(reports) == 3
    assert all(rep["holds"] for rep in reports)
    assert all(rep["phi"] <= rep["psi"] + 1e-9 for rep in reports)


def test_verify_bound_violation_exits_3(instance_file, capsys, monkeypatch):
    class Broken:
        holds = False
        violations = ()

    monkeypatch.setattr(cli, "verify_bound", lambda *a, **kw: Broken())
    code, _, err = run(
        ["verify-bound", "--instances", str(instance_file), "--values", "zero"],
        capsys,
    )
    assert code == 3
    assert "bound violated on 3 of 3 instances" in err
