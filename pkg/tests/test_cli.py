import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fairflow import GridCoverageError, compare_trajectories, linear_network
from fairflow.cli import main
from fairflow.harness import (
    EXIT_CONFIG,
    EXIT_EVENT_CAP,
    EXIT_INVARIANT,
    EXIT_NONCONVERGENCE,
    ExperimentSpec,
    manifest_path,
    run,
)


@pytest.fixture
def cfg(write_config, linear):
    return str(write_config(linear))


def read_manifest(out):
    return json.loads(manifest_path(out).read_text())


# ---------------------------------------------------------------- comparison

def test_compare_identical_and_constant():
    grid = np.linspace(0, 1, 5)
    a = (grid, np.ones((5, 2)))
    assert compare_trajectories(a, a, grid)[0] == 0
    b = (grid, np.tile([4.0, 5.0], (5, 1)))
    sup, comp = compare_trajectories(a, b, grid)
    assert sup == pytest.approx(5.0)
    np.testing.assert_allclose(comp, [3, 4])


def test_compare_interpolates_objects(linear):
    from fairflow import integrate

    traj = integrate(linear, [1, 1, 1], 2.0, dt=0.01, output_grid=[0, 1, 2])
    sup, _ = compare_trajectories(traj, (traj.t, traj.n), [0.5, 1.5])
    assert sup == 0


def test_compare_grid_coverage():
    a = (np.array([0.0, 1.0]), np.zeros((2, 1)))
    with pytest.raises(GridCoverageError):
        compare_trajectories(a, a, [0.0, 2.0])


# ---------------------------------------------------------------- commands

def test_allocate_json(cfg, tmp_path, capsys):
    out = tmp_path / "alloc.json"
    assert main(["allocate", "--config", cfg, "--state", "1,1,1", "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    np.testing.assert_allclose(result["lambda"], [2 / 3, 2 / 3, 1 / 3], atol=1e-6)
    np.testing.assert_allclose(result["prices"], [1.5, 1.5], atol=1e-6)
    assert result["residual"] <= 1e-9 and result["iterations"] >= 1
    manifest = read_manifest(out)
    assert manifest["command"] == "allocate"
    assert manifest["params"]["state"] == "1,1,1"
    assert len(manifest["config_sha256"]) == 64
    assert manifest["tolerances"]["eps_kkt"] == 1e-9
    assert "wall_clock_seconds" in manifest and manifest["version"]


def test_allocate_stdout(cfg, capsys):
    assert main(["allocate", "--config", cfg, "--state", "1,3,0"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["lambda"][2] == 0


def test_fluid_csv(cfg, tmp_path):
    out = tmp_path / "traj.csv"
    code = main(["fluid", "--config", cfg, "--n0", "1,1,1", "--horizon", "20", "--dt", "1e-2",
                 "--samples", "11", "--out", str(out)])
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["t", "n_1", "n_2", "n_3", "F", "H", "K", "w_1", "w_2", "feas_1", "feas_2"]
    assert len(rows) == 12
    manifest = read_manifest(out)
    assert manifest["tolerances"]["dt"] == 1e-2
    assert manifest["diagnostics"]["steps"] > 0


def test_simulate_csv_and_reproducible(cfg, tmp_path):
    outs = [tmp_path / f"path{k}.csv" for k in range(2)]
    for out in outs:
        assert main(["simulate", "--config", cfg, "--n0", "1,1,1", "--horizon", "100",
                     "--seed", "42", "--out", str(out)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()
    header = outs[0].read_text().splitlines()[0]
    assert header == "t,event,i,N_1,N_2,N_3,U_1,U_2"
    manifest = read_manifest(outs[0])
    assert manifest["seed"] == 42 and manifest["diagnostics"]["identity_exact"]


def test_fluidlimit_csv(cfg, tmp_path):
    out = tmp_path / "report.csv"
    assert main(["fluidlimit", "--config", cfg, "--n0", "1,1,1", "--scales", "10,40",
                 "--seeds", "2", "--seed", "3", "--horizon", "2", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][:3] == ["r", "seed", "sup_error"]
    assert [r[1] for r in rows[1:4]] == ["3", "4", "median"]
    assert len(read_manifest(out)["diagnostics"]["medians"]) == 2


def test_manifold_lift_cone(cfg, tmp_path, capsys):
    assert main(["manifold", "--config", cfg, "--q", "1,1"]) == 0
    result = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(result["n"], [0.5, 0.5, 1.0])
    np.testing.assert_allclose(result["w"], [1.5, 1.5])
    assert result["checks"]["invariant"]

    assert main(["lift", "--config", cfg, "--w", "2,1"]) == 0
    result = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(result["n"], [1, 0, 1], atol=1e-8)

    out = tmp_path / "cone.csv"
    assert main(["cone", "--config", cfg, "--grid", "7", "--out", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["w_1", "w_2", "inside"] and len(rows) == 50
    for w1, w2, inside in rows[1:]:
        w1, w2 = float(w1), float(w2)
        if abs(w2 - 0.5 * w1) > 1e-9 and abs(w2 - 2 * w1) > 1e-9:
            assert inside == str(int(0.5 * w1 <= w2 <= 2 * w1))
    assert manifest_path(out).exists()


# ---------------------------------------------------------------- exit codes

def test_config_error_names_field(write_config, tmp_path, capsys):
    cfg = {
        "resources": [{"name": "a", "capacity": -1}],
        "routes": [{"name": "r", "resources": ["a"], "nu": 0.5, "mu": 1}],
        "alpha": 1,
    }
    path = write_config(cfg, "bad.json")
    out = tmp_path / "x.json"
    assert main(["allocate", "--config", str(path), "--state", "1", "--out", str(out)]) == EXIT_CONFIG
    assert "resources[0].capacity" in capsys.readouterr().err
    assert not out.exists() and not manifest_path(out).exists()


def test_missing_config(tmp_path):
    assert main(["allocate", "--config", str(tmp_path / "nope.json"), "--state", "1"]) == EXIT_CONFIG


def test_bad_state_vector(cfg, capsys):
    assert main(["allocate", "--config", cfg, "--state", "1,1"]) == EXIT_CONFIG
    assert main(["allocate", "--config", cfg, "--state", "a,b,c"]) == EXIT_CONFIG


def test_seed_required(cfg, capsys):
    assert main(["simulate", "--config", cfg, "--n0", "1,1,1"]) == EXIT_CONFIG
    assert "--seed" in capsys.readouterr().err


def test_nonconvergence_exit(cfg, capsys):
    assert main(["allocate", "--config", cfg, "--state", "0.1,5,2.2", "--eps-kkt", "1e-300"]) == EXIT_NONCONVERGENCE
    assert "converge" in capsys.readouterr().err


def test_invariant_violation_exit(cfg, tmp_path, capsys):
    out = tmp_path / "traj.csv"
    code = main(["fluid", "--config", cfg, "--n0", "1,1,1", "--horizon", "5", "--dt", "1e-2",
                 "--tol", "-1", "--out", str(out)])
    assert code == EXIT_INVARIANT
    assert "H increased" in capsys.readouterr().err
    assert not out.exists()


def test_event_cap_exit(cfg):
    assert main(["simulate", "--config", cfg, "--n0", "1,1,1", "--seed", "1",
                 "--max-events", "10"]) == EXIT_EVENT_CAP


def test_run_with_spec(cfg, tmp_path):
    out = tmp_path / "lift.json"
    spec = ExperimentSpec("lift", cfg, {"w": [1.5, 1.5]}, out=str(out))
    assert run(spec) == 0
    assert read_manifest(out)["output_sha256"]


def test_console_script(cfg):
    proc = subprocess.run(
        [sys.executable, "-m", "fairflow", "allocate", "--config", cfg, "--state", "1,1,1"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["lambda"][2] == pytest.approx(1 / 3, abs=1e-6)
