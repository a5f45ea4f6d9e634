import json
from pathlib import Path

import numpy as np
import pytest

from srilab import cli, io

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, name="approx-drift", **over):
    doc = json.loads((CONFIGS / f"{name}.json").read_text())
    doc.update(over)
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(doc))
    return p


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    lines = [json.loads(line) for line in out.out.splitlines() if line.strip()]
    return code, lines, out.err


def test_run_writes_bundle(tmp_path, capsys):
    cfg = write_config(tmp_path, N=5000)
    code, (summary,), _ = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / "out", "--svg")
    assert code == 0
    bundle = tmp_path / "out" / "approx-drift" / "seed-1"
    assert {p.name for p in bundle.iterdir()} == {"config.json", "trajectory.csv", "report.json", "summary.json",
                                                  "norms.svg", "r.svg"}
    assert summary["verdict"] == "stable_evidence" and summary["invariants_ok"]
    report = json.loads((bundle / "report.json").read_text())
    assert "evidence, not proof" in report["rationale"]
    assert io.read_trajectory_csv(bundle / "trajectory.csv").N == 5000


def test_run_repeller_is_unstable(tmp_path, capsys):
    cfg = write_config(tmp_path, "repeller")
    code, (summary,), _ = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)
    assert code == 0 and summary["verdict"] == "unstable_evidence"


def test_missing_seed_exit_2(tmp_path, capsys):
    doc = json.loads((CONFIGS / "approx-drift.json").read_text())
    del doc["seed"]
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    code, _, err = run_cli(capsys, "run", "--config", p, "--out", tmp_path)
    assert code == 2 and "seed required" in err


def test_malformed_map_names_field(tmp_path, capsys):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"map": {"type": "affine", "A": "oops", "b": [0.0]}}))
    code, _, err = run_cli(capsys, "check-map", "--config", p, "--out", tmp_path / "r.json")
    assert code == 2 and "map.A" in err


def test_io_errors_exit_3(tmp_path, capsys):
    code, _, err = run_cli(capsys, "run", "--config", tmp_path / "missing.json")
    assert code == 3 and "io error" in err
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_config(tmp_path, N=200)
    code, _, _ = run_cli(capsys, "run", "--config", cfg, "--out", blocker / "sub")
    assert code == 3


def test_same_seed_byte_identical(tmp_path, capsys):
    cfg = write_config(tmp_path, N=3000)
    for out in ("a", "b"):
        assert run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / out, "--seed", 11)[0] == 0
    a = (tmp_path / "a" / "approx-drift" / "seed-11" / "trajectory.csv").read_bytes()
    b = (tmp_path / "b" / "approx-drift" / "seed-11" / "trajectory.csv").read_bytes()
    assert a == b


def test_verify_ok_and_tampered(tmp_path, capsys):
    cfg = write_config(tmp_path, N=2000)
    run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)
    table = tmp_path / "approx-drift" / "seed-1" / "trajectory.csv"
    code, (res,), _ = run_cli(capsys, "verify", "--trajectory", table)
    assert code == 0 and res["ok"] and res["summary_checked"] and res["membership_checked"]
    lines = table.read_text().splitlines()
    cells = lines[10].split(",")
    cells[2] = repr(float(cells[2]) + 1e-3)
    lines[10] = ",".join(cells)
    table.write_text("\n".join(lines) + "\n")
    code, (res,), _ = run_cli(capsys, "verify", "--trajectory", table)
    assert code == 4 and not res["ok"]


def test_verify_summary_mismatch(tmp_path, capsys):
    cfg = write_config(tmp_path, N=500)
    run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)
    bundle = tmp_path / "approx-drift" / "seed-1"
    summary = json.loads((bundle / "summary.json").read_text())
    summary["sup_norm"] += 1.0
    (bundle / "summary.json").write_text(json.dumps(summary))
    code, (res,), _ = run_cli(capsys, "verify", "--trajectory", bundle / "trajectory.csv")
    assert code == 4 and any("sup_norm" in p for p in res["problems"])


def test_diagnose_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path, N=4000)
    run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)
    bundle = tmp_path / "approx-drift" / "seed-1"
    original = json.loads((bundle / "report.json").read_text())
    code, (res,), _ = run_cli(capsys, "diagnose", "--trajectory", bundle / "trajectory.csv",
                              "--out", tmp_path / "rep.json")
    assert code == 0 and res["verdict"] == original["verdict"]
    again = json.loads((tmp_path / "rep.json").read_text())
    assert again["r"] == original["r"] and again["T"] == original["T"]


def test_batch_seeds_with_jobs(tmp_path, capsys):
    cfg = write_config(tmp_path, N=2000)
    code, summaries, _ = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path, "--seeds", 3, "--jobs", 2)
    assert code == 0 and [s["seed"] for s in summaries] == [1, 2, 3]
    assert len({s["T"] for s in summaries}) == 1


def test_out_dir_precedence(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SRILAB_OUT", str(tmp_path / "env"))
    cfg = write_config(tmp_path, N=200)
    run_cli(capsys, "run", "--config", cfg)
    assert (tmp_path / "env" / "approx-drift" / "seed-1" / "summary.json").exists()
    cfg = write_config(tmp_path, N=200, output_dir=str(tmp_path / "cfg"))
    run_cli(capsys, "run", "--config", cfg)
    assert (tmp_path / "cfg" / "approx-drift" / "seed-1").exists()


def test_sweep_subcommand(tmp_path, capsys):
    cfg = write_config(tmp_path, "sweep-scalar", N=20000)
    code, (res,), _ = run_cli(capsys, "sweep", "--config", cfg, "--eps-grid", "0.05,0.1,0.2", "--out", tmp_path)
    assert code == 0 and res["monotone"]
    table = (tmp_path / "sweep-scalar" / "sweep.csv").read_text().splitlines()
    assert table[0] == "eps,delta_hat,verdict" and len(table) == 4
    for row in res["rows"]:
        assert abs(row["delta_hat"] - row["eps"]) <= 0.03


def test_sweep_rejects_bad_grid(tmp_path, capsys):
    cfg = write_config(tmp_path, "sweep-scalar", N=200)
    assert run_cli(capsys, "sweep", "--config", cfg, "--eps-grid", "0.1,x")[0] == 2
    assert run_cli(capsys, "sweep", "--config", cfg, "--eps-grid", "-0.1")[0] == 2


def test_check_map_examples(tmp_path, capsys):
    code, (res,), _ = run_cli(capsys, "check-map", "--config", CONFIGS / "map-drift-ball.json",
                              "--out", tmp_path / "a.json")
    assert code == 0 and res["all_corroborated"]
    assert res["verdicts"]["drift_equivalence"] == "corroborated"
    code, (res,), _ = run_cli(capsys, "check-map", "--config", CONFIGS / "map-understated-K.json",
                              "--out", tmp_path / "b.json")
    assert code == 0 and res["verdicts"]["pointwise_bound"] == "falsified"
    report = json.loads((tmp_path / "b.json").read_text())
    witness = next(c for c in report["checks"] if c["property"] == "pointwise_bound")["witness"]
    assert witness["value"] > witness["limit"]


def test_flow_examples(tmp_path, capsys):
    code, (res,), _ = run_cli(capsys, "flow", "--config", CONFIGS / "map-neg-x.json", "--x0", "1", "-T", 1,
                              "--dt", 1e-3, "--out", tmp_path / "f.csv")
    assert code == 0 and abs(res["final_state"][0] - np.exp(-1)) <= 2e-4
    code, (res,), _ = run_cli(capsys, "flow", "--config", CONFIGS / "map-zero.json", "--x0", "2.5", "-T", 1,
                              "--dt", 0.1, "--out", tmp_path / "z.csv")
    rows = (tmp_path / "z.csv").read_text().splitlines()[1:]
    assert {r.split(",")[2] for r in rows} == {"2.5"}
    rep = tmp_path / "rep.json"
    rep.write_text(json.dumps({"map": {"type": "affine", "A": [[5.0]], "b": [0.0]}}))
    code, (res,), _ = run_cli(capsys, "flow", "--config", rep, "--x0", "1", "-T", 10, "--dt", 0.1,
                              "--out", tmp_path / "d.csv")
    assert code == 0 and res["diverged"]
    assert (tmp_path / "d.csv").read_text().splitlines()[-1].endswith(",1")


@pytest.mark.parametrize("argv", [["flow", "--x0", "1,2", "-T", "1"], ["flow", "--x0", "1", "-T", "1", "--dt", "0"]])
def test_flow_validation(tmp_path, capsys, argv):
    code, _, _ = run_cli(capsys, *argv, "--config", CONFIGS / "map-neg-x.json", "--out", tmp_path / "f.csv")
    assert code == 2
