"""Command-line front end: outputs, provenance, exit codes, atomicity."""

import json
import os

import numpy as np
import pytest

from obstaclesim import cli
from obstaclesim.config import config_hash, preset_config

ODE_CONF = '[scenario]\npreset = "ode-contact"\n'
PM_SMALL_CONF = ("[scenario]\npreset = pm-contact\n"
                 "[mesh]\nn = 64\n[time]\nt_final = 0.25\n")


def _write_conf(tmp_path, text, name="scenario.conf"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _read_csv_lines(path):
    with open(path) as f:
        return f.read().splitlines()


# ---------------------------------------------------------------------------
# run

def test_run_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", _write_conf(tmp_path, ODE_CONF),
                   "--out", str(out)])
    assert rc == 0
    for name in ("trajectory.csv", "snapshots.csv", "measures.csv", "nu.csv",
                 "summary.json"):
        assert (out / name).exists()
    cfg = preset_config("ode-contact")
    lines = _read_csv_lines(out / "trajectory.csv")
    assert lines[0] == "# obstaclesim " + cli.__version__
    assert lines[1] == "# config_hash " + config_hash(cfg)
    assert lines[2] == "# master_seed 0"
    assert lines[3] == "# path_id 0"
    assert lines[4] == "t,mass_l1,energy_l2sq,min_u,penalty_l1,reflected_cum"
    body = json.loads((out / "summary.json").read_text())
    assert body["config_hash"] == config_hash(cfg)
    assert body["final"]["nsteps"] == 4000
    assert abs(body["final"]["reflected_total"] - 0.2) < 1e-8
    assert body["audit"]["all_pass"]
    assert config_hash(cfg) in capsys.readouterr().out
    # no stray temp files from atomic writes
    assert not [f for f in os.listdir(out) if f.endswith(".part")]


def test_run_with_kinetics(tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", _write_conf(tmp_path, PM_SMALL_CONF),
                   "--out", str(out), "--kinetics", "--path-id", "2"])
    assert rc == 0
    lines = _read_csv_lines(out / "kinetic_residuals.csv")
    assert "# path_id 2" in lines
    assert lines[4] == "phi_id,term,value,residual"
    assert len(lines) > 5


def test_run_reproducible_across_invocations(tmp_path):
    conf = _write_conf(tmp_path, PM_SMALL_CONF)
    outs = []
    for d in ("a", "b"):
        out = tmp_path / d
        assert cli.main(["run", "--config", conf, "--out", str(out)]) == 0
        outs.append((out / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]


# ---------------------------------------------------------------------------
# ensemble / study / audit / list

def test_ensemble_outputs(tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["ensemble", "--config", _write_conf(tmp_path, ODE_CONF),
                   "--out", str(out), "--paths", "2"])
    assert rc == 0
    lines = _read_csv_lines(out / "ensemble.csv")
    header = lines[3].split(",")
    assert header[0] == "t"
    assert "mass_l1_mean" in header and "mass_l1_sem" in header
    body = json.loads((out / "summary.json").read_text())
    assert body["paths"] == 2
    # deterministic scenario: sem column is all zeros
    sem_col = header.index("mass_l1_sem")
    sems = [float(l.split(",")[sem_col]) for l in lines[4:]]
    assert all(s == 0.0 for s in sems)


def test_study_epsilon_outputs(tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["study-epsilon", "--config",
                   _write_conf(tmp_path, PM_SMALL_CONF), "--out", str(out),
                   "--eps", "0.1,0.05"])
    assert rc == 0
    lines = _read_csv_lines(out / "study.csv")
    assert lines[3] == "epsilon,penalty_l1,lam_total"
    assert len(lines) == 6
    body = json.loads((out / "summary.json").read_text())
    assert body["monotone"] is True
    assert "slope" in body and "violations" in body


def test_list_scenarios(capsys):
    assert cli.main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("pm-contact", "heat-contact", "fast-diffusion",
                 "ode-contact"):
        assert name in out


def test_audit_command(tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["audit", "--preset", "pm-contact", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "audit.json").read_text())
    assert report["all_pass"]
    stdout = capsys.readouterr().out
    assert "all-pass" in stdout
    # without --out it only prints
    assert cli.main(["audit", "--preset", "ode-contact"]) == 0


# ---------------------------------------------------------------------------
# exit codes and atomicity

def test_exit_code_config_error(tmp_path, capsys):
    bad = _write_conf(tmp_path, "[mesh]\ncells = 7\n")
    assert cli.main(["run", "--config", bad, "--out",
                     str(tmp_path / "o")]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert cli.main(["run", "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["run", "--preset", "nope", "--out",
                     str(tmp_path / "o")]) == 2


def test_exit_code_numerical_abort(tmp_path, capsys):
    conf = _write_conf(tmp_path, "[scenario]\npreset = pm-contact\n"
                                 "[mesh]\nn = 128\n"
                                 "[time]\nt_final = 0.5\ndt_fixed = 0.01\n")
    assert cli.main(["run", "--config", conf, "--out",
                     str(tmp_path / "o")]) == 3
    assert "numerical abort" in capsys.readouterr().err


def test_atomic_write_cleans_up_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "file.csv"
    cli._atomic_write(str(target), "hello\n")
    assert target.read_text() == "hello\n"

    def boom(src, dst):
        raise OSError("simulated crash")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli._atomic_write(str(tmp_path / "other.csv"), "data\n")
    assert not (tmp_path / "other.csv").exists()
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]
