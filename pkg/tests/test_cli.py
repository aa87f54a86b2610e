import json
import os

import numpy as np
import pytest
import yaml

from qrelab.cli import (EXIT_CONFIG, EXIT_NO_CONVERGENCE, EXIT_OK, main)
from qrelab.config_io import read_policy_csv
from qrelab.scenarios import prisoners_dilemma


def pd_yaml(tmp_path):
    cfg = {
        "agents": 2,
        "states": ["s0"],
        "actions": [["c", "d"], ["c", "d"]],
        "gamma": 0.0,
        "r_min": 0.0,
        "r_max": 5.0,
        "rho0": [1.0],
        "transition": [
            {"state": "s0", "actions": [a, b], "probs": [1.0]}
            for a in "cd" for b in "cd"
        ],
        "rewards": [
            {"state": "s0", "actions": ["c", "c"], "values": [3.0, 3.0]},
            {"state": "s0", "actions": ["c", "d"], "values": [0.0, 5.0]},
            {"state": "s0", "actions": ["d", "c"], "values": [5.0, 0.0]},
            {"state": "s0", "actions": ["d", "d"], "values": [1.0, 1.0]},
        ],
    }
    path = tmp_path / "pd.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_solve_end_to_end(tmp_path):
    out = tmp_path / "run"
    code = main(["solve", "--game", pd_yaml(tmp_path), "--lambda", "2",
                 "--mode", "exact", "--iters", "3000", "--seed", "7",
                 "--out-dir", str(out)])
    assert code == EXIT_OK
    for name in ("policy.csv", "trace.csv", "diagnostics.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["outputs"]) == {"policy.csv", "trace.csv",
                                        "diagnostics.csv"}
    g = prisoners_dilemma()
    policy, lam = read_policy_csv(out / "policy.csv", g)
    assert lam == 2.0
    assert policy.rows[0][0, 1] == pytest.approx(0.900211516030, abs=1e-4)


def test_malformed_config_exits_2_without_outputs(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("agents: 2\nstates: [s0]\n")     # missing everything else
    out = tmp_path / "run"
    code = main(["solve", "--game", str(bad), "--out-dir", str(out)])
    assert code == EXIT_CONFIG
    assert not (out / "policy.csv").exists()
    assert not (out / "manifest.json").exists()


def test_missing_game_and_scenario_exits_2(tmp_path):
    assert main(["solve", "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_repeat_runs_are_byte_identical(tmp_path):
    args = ["solve", "--scenario", "prisoners_dilemma", "--lambda", "2",
            "--iters", "2000", "--seed", "3"]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--out-dir", str(out1)]) == EXIT_OK
    assert main(args + ["--out-dir", str(out2)]) == EXIT_OK
    for name in ("policy.csv", "trace.csv", "diagnostics.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_out_dir_env_var(tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv("QRELAB_OUT_DIR", str(target))
    code = main(["solve", "--scenario", "matching_pennies", "--lambda", "1",
                 "--iters", "500", "--seed", "0"])
    assert code == EXIT_OK
    assert (target / "policy.csv").exists()


def test_sweep_emits_table(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--scenario", "merge", "--lambda-grid", "0,2",
                 "--iters", "300", "--episodes", "50", "--horizon", "20",
                 "--seed", "1", "--out-dir", str(out)])
    assert code == EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("lambda,near_miss_rate")
    assert len(lines) == 3


def test_sweep_requires_traffic_scenario(tmp_path):
    code = main(["sweep", "--scenario", "prisoners_dilemma",
                 "--out-dir", str(tmp_path)])
    assert code == EXIT_CONFIG


def test_calibrate_synthetic(tmp_path):
    out = tmp_path / "calib"
    code = main(["calibrate", "--scenario", "prisoners_dilemma",
                 "--lambda-true", "2", "--observations", "2000",
                 "--lambda-grid", "0.5,1,2,4,8", "--seed", "5",
                 "--out-dir", str(out)])
    assert code == EXIT_OK
    assert (out / "behavior.csv").exists()
    text = (out / "calibration.csv").read_text()
    assert "optimum" in text


def test_metrics_on_stored_oracle_policy(tmp_path):
    run = tmp_path / "run"
    assert main(["solve", "--scenario", "prisoners_dilemma", "--lambda", "2",
                 "--iters", "4000", "--seed", "0",
                 "--out-dir", str(run)]) == EXIT_OK
    out = tmp_path / "metrics"
    code = main(["metrics", "--scenario", "prisoners_dilemma",
                 "--policy", str(run / "policy.csv"), "--lambda", "2",
                 "--out-dir", str(out)])
    assert code == EXIT_OK
    rows = (out / "diagnostics.csv").read_text().splitlines()
    gap = float(rows[1].split(",")[0])
    assert gap <= 1e-8


def test_ode_mode_runs(tmp_path):
    out = tmp_path / "ode"
    code = main(["solve", "--scenario", "prisoners_dilemma", "--lambda", "2",
                 "--mode", "ode", "--iters", "2000", "--out-dir", str(out)])
    assert code == EXIT_OK
    policy, _ = read_policy_csv(out / "policy.csv", prisoners_dilemma())
    assert policy.rows[0][0, 1] == pytest.approx(0.900211516030, abs=1e-3)


def test_sampled_mode_runs(tmp_path):
    out = tmp_path / "sampled"
    code = main(["solve", "--scenario", "prisoners_dilemma", "--lambda", "1",
                 "--mode", "sampled", "--iters", "300", "--seed", "2",
                 "--retrace-lambda", "0.8", "--out-dir", str(out)])
    assert code in (EXIT_OK, EXIT_NO_CONVERGENCE)
    assert (out / "policy.csv").exists()


def test_continuous_benchmark(tmp_path):
    out = tmp_path / "cont"
    code = main(["solve", "--continuous", "--lambda", "4", "--mixture-m", "3",
                 "--iters", "100", "--seed", "0", "--out-dir", str(out)])
    assert code == EXIT_OK
    lines = (out / "density.csv").read_text().splitlines()
    assert lines[0] == "x,gibbs,mixture"
    assert len(lines) == 202
