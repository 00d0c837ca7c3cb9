"""Stepping layer: drift assembly, penalty projection, trajectories,
ensembles, and reproducibility."""

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obstaclesim.config import preset_config
from obstaclesim.grid import Mesh, integrate
from obstaclesim.noise import ModeSpec, RngKey, build_mode_set, compute_f_fields
from obstaclesim.solver import (NumericalAbort, ScenarioConfig, assemble_drift,
                                build_noise, compute_stable_dt,
                                noise_divergence, penalty_project,
                                run_ensemble, run_trajectory,
                                stats_from_record)


def _heat_cfg(**kw):
    """Linear heat flow, no noise, obstacle far above the state."""
    base = dict(n=64, T=0.1, m=1.0, sigma_kind="zero", alpha=0.0,
                obstacle_kind="constant", obstacle_base=5.0, xi_max=6.0,
                init_kind="sine", init_base=1.0, init_amplitude=0.5,
                epsilon=0.1, dt_fixed=2e-5)
    base.update(kw)
    return ScenarioConfig(**base)


# ---------------------------------------------------------------------------
# Single operations

def test_drift_vanishes_on_constant_state():
    cfg = preset_config("pm-contact", n=64)
    mesh = cfg.mesh()
    nz = build_noise(cfg, mesh)      # homogeneous pairs: F2 == 0
    cs = replace(cfg, g_kind="linear_transport", g_coeff=0.5).coefficients()
    d = assemble_drift(mesh, np.full(mesh.n, 0.4), cs, nz.ff, cfg.alpha)
    assert np.abs(d).max() < 1e-10


def test_drift_reduces_to_discrete_laplacian():
    mesh = Mesh(64)
    cs = _heat_cfg().coefficients()
    ff = compute_f_fields(build_mode_set([], mesh), mesh)
    u = 1.0 + 0.5 * np.sin(2 * np.pi * mesh.cell_centers)
    d = assemble_drift(mesh, u, cs, ff, alpha=0.0)
    lam = (2.0 / mesh.h ** 2) * (1.0 - math.cos(2 * np.pi * mesh.h))
    assert np.abs(d + lam * (u - 1.0)).max() < 1e-12 * lam


def test_drift_is_conservative():
    cfg = preset_config("pm-contact", n=64, pairing="single", modes=3)
    mesh = cfg.mesh()
    nz = build_noise(cfg, mesh)
    rng = np.random.default_rng(0)
    u = 0.2 + rng.random(mesh.n)
    d = assemble_drift(mesh, u, cfg.coefficients(), nz.ff, cfg.alpha)
    assert abs(integrate(mesh, d, p="sum")) < 1e-11


def test_drift_rejects_nonfinite_state():
    mesh = Mesh(16)
    ff = compute_f_fields(build_mode_set([], mesh), mesh)
    u = np.ones(16)
    u[3] = np.nan
    with pytest.raises(NumericalAbort):
        assemble_drift(mesh, u, _heat_cfg().coefficients(), ff, 0.0)


def test_noise_divergence_trivial_cases():
    cfg = preset_config("pm-contact", n=64)
    mesh = cfg.mesh()
    nz = build_noise(cfg, mesh)
    cs = cfg.coefficients()
    K = nz.modes.K
    assert np.all(noise_divergence(mesh, np.zeros(mesh.n), cs, nz.modes,
                                   np.ones(K)) == 0.0)
    assert np.all(noise_divergence(mesh, np.full(mesh.n, 0.5), cs, nz.modes,
                                   np.zeros(K)) == 0.0)
    rng = np.random.default_rng(1)
    out = noise_divergence(mesh, 0.2 + rng.random(mesh.n), cs, nz.modes,
                           rng.standard_normal(K))
    assert abs(integrate(mesh, out, p="sum")) < 1e-12
    with pytest.raises(ValueError):
        noise_divergence(mesh, np.ones(mesh.n), cs, nz.modes, np.ones(K + 1))


def test_penalty_project_closed_forms():
    psi = np.array([1.0])
    v, r = penalty_project(np.array([0.5]), psi, 0.1, 0.1)
    assert v[0] == 0.5 and r[0] == 0.0          # constraint inactive
    v, r = penalty_project(np.array([2.0]), psi, 0.1, 0.1)   # dt/eps = 1
    assert v[0] == pytest.approx(1.5) and r[0] == pytest.approx(0.5)
    v, r = penalty_project(np.array([2.0]), psi, 1.0, 1e-12)  # stiff limit
    assert v[0] == pytest.approx(1.0, abs=1e-9)
    assert r[0] == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        penalty_project(np.array([2.0]), psi, 0.0, 0.1)


def test_penalty_project_lower_side():
    psi = np.array([1.0])
    v, r = penalty_project(np.array([0.0]), psi, 0.1, 0.1, side="lower")
    assert v[0] == pytest.approx(0.5) and r[0] == pytest.approx(0.5)
    v, r = penalty_project(np.array([2.0]), psi, 0.1, 0.1, side="lower")
    assert v[0] == 2.0 and r[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.1, 2.0), st.floats(1e-3, 1.0))
def test_penalty_project_solves_implicit_equation(ustar, psi, lam):
    # v + lam (v - psi)^+ == u*, with r = lam (v - psi)^+ >= 0
    v, r = penalty_project(np.array([ustar]), np.array([psi]), lam * 0.1, 0.1)
    assert r[0] >= 0.0
    assert v[0] + lam * max(v[0] - psi, 0.0) == pytest.approx(ustar, abs=1e-12)
    assert r[0] == pytest.approx(lam * max(v[0] - psi, 0.0), abs=1e-12)


def test_stable_dt_divides_horizon():
    cfg = preset_config("pm-contact", n=64)
    mesh = cfg.mesh()
    dt = compute_stable_dt(cfg, mesh, build_noise(cfg, mesh).ff)
    assert abs(round(cfg.T / dt) * dt - cfg.T) < 1e-12
    cfg2 = replace(cfg, dt_fixed=3e-4)
    dt2 = compute_stable_dt(cfg2, mesh, build_noise(cfg2, mesh).ff)
    assert dt2 <= 3e-4 and abs(round(cfg2.T / dt2) * dt2 - cfg2.T) < 1e-12


# ---------------------------------------------------------------------------
# Config validation

def test_validate_rejects_bad_scenarios():
    with pytest.raises(ValueError, match="epsilon"):
        preset_config("pm-contact", epsilon=-0.1).validate()
    with pytest.raises(ValueError, match="T"):
        preset_config("pm-contact", T=0.0).validate()
    with pytest.raises(ValueError, match="u_init"):
        preset_config("pm-contact", init_base=2.0).validate()
    # the same start is allowed with the analytic-scenario escape hatch
    preset_config("pm-contact", init_base=2.0, xi_max=3.0,
                  allow_init_above_obstacle=True).validate()


# ---------------------------------------------------------------------------
# Trajectories

def test_mass_identity_per_step():
    rec = run_trajectory(preset_config("pm-contact", n=64, T=0.25))
    defect = np.abs(rec.mass_l1 + rec.reflected_cum - rec.mass_init)
    assert defect.max() < 1e-12 * (1.0 + rec.mass_init)


def test_linear_heat_exact_decay():
    # u - 1 decays with the discrete symbol; sup error is O(dt)
    cfg = _heat_cfg()
    rec = run_trajectory(cfg)
    mesh = cfg.mesh()
    lam = (2.0 / mesh.h ** 2) * (1.0 - math.cos(2 * np.pi * mesh.h))
    exact = 1.0 + 0.5 * math.exp(-lam * cfg.T) * np.sin(
        2 * np.pi * mesh.cell_centers)
    err = np.abs(rec.u_final - exact).max()
    assert err < 2.0 * rec.dt
    rec2 = run_trajectory(replace(cfg, dt_fixed=1e-5))
    err2 = np.abs(rec2.u_final - exact).max()
    assert err / err2 > 1.7                      # first order in dt


def test_constant_obstacle_ode_relaxation():
    # constant state over a constant obstacle: exact scalar relaxation
    cfg = preset_config("ode-contact")
    rec = run_trajectory(cfg)
    a, c, eps = cfg.init_base, cfg.obstacle_base, cfg.epsilon
    exact = c + (a - c) * np.exp(-rec.times / eps)
    assert np.abs(rec.min_u - exact).max() < 10.0 * rec.dt
    # cumulative reflected mass approaches a - c (T = 20 eps here)
    assert abs(rec.reflected_cum[-1] - (a - c)) < 1e-8
    assert abs(rec.measures.total("nu") - (a - c)) < 1e-8


def test_numerical_abort_on_unstable_dt():
    cfg = preset_config("pm-contact", n=128, dt_fixed=0.01, T=0.5)
    with pytest.raises(NumericalAbort) as exc:
        run_trajectory(cfg)
    assert exc.value.t is not None
    assert exc.value.last_state is not None


def test_trajectory_bit_reproducible():
    cfg = preset_config("pm-contact", n=64, T=0.25)
    r1 = run_trajectory(cfg)
    r2 = run_trajectory(cfg)
    assert np.array_equal(r1.u_final, r2.u_final)
    assert np.array_equal(r1.diag, r2.diag)
    assert np.array_equal(r1.measures.lam, r2.measures.lam)
    r3 = run_trajectory(cfg, path_id=1)
    assert not np.array_equal(r1.u_final, r3.u_final)


def test_deposit_flag_leaves_diagnostics_unchanged():
    cfg = preset_config("pm-contact", n=64, T=0.25)
    full = run_trajectory(cfg)
    lean = run_trajectory(cfg, deposit=False)
    assert np.array_equal(full.diag, lean.diag)
    assert lean.measures.total("m") == 0.0
    assert lean.measures.total("lam") == 0.0
    assert full.measures.total("lam") > 0.0


def test_record_full_and_snapshots():
    cfg = preset_config("pm-contact", n=64, T=0.25,
                        snapshot_times=(0.1, 0.25))
    rec = run_trajectory(cfg, record_full=True)
    assert rec.u_records.shape == (len(rec.record_idx), cfg.n)
    assert np.array_equal(rec.u_records[-1], rec.u_final)
    assert set(rec.snapshots) == {0.1, 0.25}
    u_snap, psi_snap = rec.snapshots[0.25]
    assert np.array_equal(u_snap, rec.u_final)
    assert u_snap.shape == psi_snap.shape == (cfg.n,)


# ---------------------------------------------------------------------------
# Ensembles

def test_ensemble_deterministic_paths_have_zero_sem():
    cfg = preset_config("heat-contact", n=64, T=0.25)
    stats, _ = run_ensemble(cfg, 3)
    assert np.all(stats.sem("mass_l1") == 0.0)
    assert np.all(stats.sem("energy_l2sq") == 0.0)
    # expectation of a deterministic path equals the path itself
    rec = run_trajectory(cfg)
    assert np.allclose(stats.mean("energy_l2sq"),
                       rec.recorded(rec.energy_l2sq))


def test_ensemble_merge_matches_direct_mean():
    cfg = preset_config("pm-contact", n=64, T=0.25)
    stats, recs = run_ensemble(cfg, 4, keep_records=True)
    manual = stats_from_record(recs[0])
    for r in recs[1:]:
        manual = manual.merge(stats_from_record(r))
    assert np.allclose(stats.mean("mass_l1"), manual.mean("mass_l1"))
    assert np.allclose(stats.sem("penalty_l1"), manual.sem("penalty_l1"))


def test_ensemble_merge_rejects_mismatched_grids():
    cfg = preset_config("pm-contact", n=64, T=0.25)
    a = stats_from_record(run_trajectory(cfg))
    b = stats_from_record(run_trajectory(replace(cfg, T=0.5)))
    with pytest.raises(ValueError):
        a.merge(b)
    with pytest.raises(ValueError):
        run_ensemble(cfg, 0)


def test_ensemble_independent_of_worker_count(monkeypatch):
    cfg = preset_config("pm-contact", n=64, T=0.25)
    monkeypatch.setenv("SIM_THREADS", "1")
    s1, _ = run_ensemble(cfg, 4)
    monkeypatch.setenv("SIM_THREADS", "4")
    s4, _ = run_ensemble(cfg, 4)
    for name in s1.means:
        assert np.array_equal(s1.means[name], s4.means[name])
        assert np.array_equal(s1.m2s[name], s4.m2s[name])
