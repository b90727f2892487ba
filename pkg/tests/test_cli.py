import csv
from pathlib import Path

import numpy as np
import pytest

from fermion_unravel.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from fermion_unravel.config import parse_config

GOLDEN = Path(__file__).parent / "golden"

SMALL = """\
[system]
n_particles = 2
n_points = 64
[run]
dt = 0.5
t_final = 2
n_hs = 2
n_traj = 3
n_runs = 2
"""


@pytest.fixture
def small_config(tmp_path, monkeypatch):
    for name in list(__import__("os").environ):
        if name.startswith("FERMION_UNRAVEL_"):
            monkeypatch.delenv(name)
    path = tmp_path / "small.ini"
    path.write_text(SMALL)
    return path


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _header(name):
    return (GOLDEN / name).read_text().strip().split(",")


def test_simulate_outputs_and_schema(small_config, tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(small_config), "--out", str(out), "--workers", "1"]) == EXIT_OK
    rows = _read(out / "ensemble.csv")
    assert rows[0] == _header("ensemble_header.csv")
    assert len(rows) == 1 + 5
    assert [float(r[0]) for r in rows[1:]] == [0.0, 0.5, 1.0, 1.5, 2.0]
    for k in range(2):
        assert _read(out / "runs" / f"run_{k}.csv")[0] == _header("run_header.csv")
    manifest = (out / "manifest").read_text()
    assert "run_1_trajectories = 3..5" in manifest
    assert "version = " in manifest


def test_manifest_reproduces_run(small_config, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(small_config), "--out", str(first), "--seed", "9", "--workers", "1"]) == 0
    cfg = parse_config(first / "manifest", environ={})
    assert cfg.master_seed == 9
    assert main(["simulate", "--config", str(first / "manifest"), "--out", str(second), "--workers", "1"]) == 0
    assert (first / "ensemble.csv").read_bytes() == (second / "ensemble.csv").read_bytes()
    cfg2 = parse_config(second / "manifest", environ={})
    assert cfg2.replace(output_path=cfg.output_path) == cfg


def test_closed_system_energy_column(small_config, tmp_path):
    out = tmp_path / "closed"
    code = main(["simulate", "--config", str(small_config), "--out", str(out), "--workers", "1",
                 "--set", "gamma=0", "--set", "t_final=5"])
    assert code == EXIT_OK
    rows = _read(out / "ensemble.csv")
    h = np.array([float(r[5]) for r in rows[1:]])
    assert np.max(np.abs(h - h[0])) < 1e-6 * abs(h[0])


def test_reference_meshes_align(small_config, tmp_path):
    sim, ref = tmp_path / "sim", tmp_path / "ref"
    assert main(["simulate", "--config", str(small_config), "--out", str(sim), "--workers", "1"]) == 0
    assert main(["reference", "--which", "analytic", "--config", str(small_config), "--out", str(ref)]) == 0
    a = _read(ref / "reference_analytic.csv")
    assert a[0] == _header("reference_analytic_header.csv")
    s = _read(sim / "ensemble.csv")
    assert [r[0] for r in a[1:]] == [r[0] for r in s[1:]]
    assert float(a[1][1]) == pytest.approx(1.0, abs=1e-6)  # X0 = sin(2 theta) <psi_1|x|psi_2> = 1 for N=2


def test_reference_pauli_and_dense(small_config, tmp_path):
    out = tmp_path / "ref"
    assert main(["reference", "--which", "pauli", "--config", str(small_config), "--out", str(out)]) == 0
    rows = _read(out / "reference_pauli.csv")
    assert rows[0][:3] == ["t", "H", "T"]
    n = np.array([[float(v) for v in r[3:]] for r in rows[1:]])
    np.testing.assert_allclose(n.sum(axis=1), 2.0, atol=1e-10)
    code = main(["reference", "--which", "dense", "--config", str(small_config), "--out", str(out),
                 "--set", "n_particles=1"])
    assert code == EXIT_OK
    assert _read(out / "reference_dense.csv")[0] == _header("reference_dense_header.csv")


def test_reference_dense_guards(small_config, tmp_path):
    out = tmp_path / "ref"
    assert main(["reference", "--which", "dense", "--config", str(small_config), "--out", str(out)]) == EXIT_CONFIG
    code = main(["reference", "--which", "dense", "--config", str(small_config), "--out", str(out),
                 "--set", "n_particles=1", "--set", "n_basis=64", "--set", "n_points=128"])
    assert code == EXIT_OK
    code = main(["reference", "--which", "dense", "--config", str(small_config), "--out", str(out),
                 "--set", "n_particles=1", "--set", "n_basis=65", "--set", "n_points=128"])
    assert code == EXIT_CONFIG


def test_eigenstates(small_config, tmp_path):
    out = tmp_path / "eig"
    assert main(["eigenstates", "--config", str(small_config), "--n-states", "9", "--out", str(out)]) == 0
    rows = _read(out / "energies.csv")
    assert rows[0] == ["index", "energy"]
    np.testing.assert_allclose([float(r[1]) for r in rows[1:]], np.arange(9) + 0.5, atol=1e-6)
    orb = _read(out / "orbitals.csv")
    assert orb[0][:2] == ["x", "psi_0"] and len(orb) == 65


def test_eigenstates_edge_cases(small_config, tmp_path):
    out = tmp_path / "eig"
    assert main(["eigenstates", "--config", str(small_config), "--n-states", "0", "--out", str(out)]) == 0
    assert _read(out / "energies.csv") == [["index", "energy"]]
    assert main(["eigenstates", "--config", str(small_config), "--n-states", "65", "--out", str(out)]) == EXIT_CONFIG


def test_double_well_eigenstates(small_config, tmp_path):
    out = tmp_path / "dw"
    code = main(["eigenstates", "--config", str(small_config), "--n-states", "4", "--out", str(out),
                 "--set", "kind=double_well", "--set", "n_points=128"])
    assert code == EXIT_OK
    e = [float(r[1]) for r in _read(out / "energies.csv")[1:]]
    assert e == sorted(e) and e[1] - e[0] < 1.0


def test_config_errors_exit_2(small_config, tmp_path, monkeypatch, capsys):
    out = str(tmp_path / "x")
    assert main(["simulate", "--config", str(small_config), "--out", out, "--set", "dt=0"]) == EXIT_CONFIG
    assert "dt" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.ini"), "--out", out]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(small_config), "--workers", "0"]) == EXIT_CONFIG
    monkeypatch.setenv("FERMION_UNRAVEL_N_HS", "0")
    assert main(["simulate", "--config", str(small_config), "--out", out]) == EXIT_CONFIG
    assert main(["frobnicate"]) == 2


def test_env_override_applies(small_config, tmp_path, monkeypatch):
    monkeypatch.setenv("FERMION_UNRAVEL_T_FINAL", "1.0")
    out = tmp_path / "env"
    assert main(["simulate", "--config", str(small_config), "--out", str(out), "--workers", "1"]) == 0
    assert len(_read(out / "ensemble.csv")) == 1 + 3


def test_runtime_failure_exit_3(small_config, tmp_path, monkeypatch):
    import fermion_unravel.cli as cli
    from fermion_unravel.unravel import EnsembleError

    def fail(*args, **kwargs):
        raise EnsembleError("all trajectories failed")

    monkeypatch.setattr(cli, "run_ensemble", fail)
    assert main(["simulate", "--config", str(small_config), "--out", str(tmp_path / "f")]) == EXIT_RUNTIME
