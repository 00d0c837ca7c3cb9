"""Level measures, deposits, windows, defect pairing, and residual terms."""

import numpy as np
import pytest

from obstaclesim.config import preset_config
from obstaclesim.grid import LevelGrid, Mesh
from obstaclesim.kinetics import (DefectAssembler, KineticTestFunction,
                                  LevelMeasure, default_test_functions,
                                  deposit_step_measures, kinetic_indicator,
                                  measure_window_mass, pair_level_measure,
                                  pair_reflection)
from obstaclesim.model import make_coefficients
from obstaclesim.solver import run_trajectory


def _acc(n=8, nbins=64, xi_max=4.0, nt=4, T=1.0):
    return LevelMeasure(LevelGrid(xi_max, nbins), n, 1.0 / n, T, nt)


def test_kinetic_indicator():
    assert kinetic_indicator(2.0, 1.0) == 1
    assert kinetic_indicator(2.0, 3.0) == 0
    assert kinetic_indicator(2.0, -0.5) == 0     # xi > 0 required
    assert kinetic_indicator(2.0, 0.0) == 0


def test_no_contact_deposits_nothing_to_lam_nu():
    acc = _acc()
    cs = make_coefficients(1.0, "sqrt_phi")
    u = np.full(acc.n_cells, 0.5)
    psi = np.ones(acc.n_cells)
    deposit_step_measures(acc, u, u, np.zeros(acc.n_cells), psi, cs,
                          alpha=0.0, eps=0.1, dt=0.01, t=0.1)
    assert acc.total("lam") == 0.0
    assert acc.total("nu") == 0.0
    assert acc.total("m") == 0.0                 # constant state: no gradient


def test_single_cell_contact_lambda_total_and_spread():
    # u=2, psi=1: lam gains eps^{-1} e^2 h dt, spread uniformly over (1, 2)
    acc = _acc()
    cs = make_coefficients(1.0, "sqrt_phi")
    n, h = acc.n_cells, acc.h
    u_before = np.full(n, 0.5)
    u_after = u_before.copy()
    u_after[3] = 2.0
    psi = np.ones(n)
    eps, dt = 0.1, 0.01
    deposit_step_measures(acc, u_before, u_after, np.zeros(n), psi, cs,
                          alpha=0.0, eps=eps, dt=dt, t=0.1)
    expected = (1.0 ** 2 / eps) * h * dt
    assert acc.total("lam") == pytest.approx(expected, rel=1e-12)
    # all of it sits in the cell-3 row, levels (1, 2)
    assert acc.lam[3].sum() == pytest.approx(expected, rel=1e-12)
    assert measure_window_mass(acc, "lam", (1.0, 2.0)) == pytest.approx(
        expected, rel=1e-12)
    assert measure_window_mass(acc, "lam", (0.0, 1.0)) == pytest.approx(0.0,
                                                                        abs=1e-15)
    # uniform density: half the window holds half the mass
    assert measure_window_mass(acc, "lam", (1.0, 1.5)) == pytest.approx(
        0.5 * expected, rel=1e-12)


def test_reflection_ledger_deposit():
    acc = _acc()
    cs = make_coefficients(1.0, "sqrt_phi")
    n = acc.n_cells
    r = np.zeros(n)
    r[2] = 0.3
    u = np.full(n, 0.5)
    deposit_step_measures(acc, u, u, r, np.ones(n), cs, 0.0, 0.1, 0.01, t=0.9)
    assert acc.total("nu") == pytest.approx(acc.h * 0.3)
    assert acc.nu[2, acc.tbin_of(0.9)] == pytest.approx(acc.h * 0.3)


def test_overflow_slot_catches_high_levels():
    acc = _acc(xi_max=1.5)
    cs = make_coefficients(1.0, "sqrt_phi")
    n = acc.n_cells
    u_after = np.full(n, 0.5)
    u_after[0] = 2.0                 # above xi_max
    deposit_step_measures(acc, np.full(n, 0.5), u_after, np.zeros(n),
                          np.ones(n), cs, 0.0, 0.1, 0.01, t=0.1)
    assert acc.lam[0, -1, :].sum() > 0.0
    assert acc.overflow_count >= 1


def test_window_mass_full_window_is_total():
    rec = run_trajectory(preset_config("pm-contact", n=64, T=0.25))
    acc = rec.measures
    assert measure_window_mass(acc, "lam") == pytest.approx(acc.total("lam"))
    assert measure_window_mass(acc, "q") == pytest.approx(acc.total("q"))
    assert measure_window_mass(acc, "nu") == pytest.approx(acc.total("nu"))
    with pytest.raises(ValueError):
        measure_window_mass(acc, "nu", xi_interval=(0.0, 1.0))
    with pytest.raises(ValueError):
        acc.component("bogus")


def test_window_above_obstacle_bound_is_empty():
    # upper obstacle keeps u <= psi <= M up to the penalty overshoot;
    # beyond ceil(M)+1 there is exactly nothing
    rec = run_trajectory(preset_config("pm-contact", n=64, T=0.25))
    acc = rec.measures
    M = rec.config.obstacle().bound
    hi = float(np.ceil(M) + 1.0)
    if hi < acc.level.xi_max:
        assert measure_window_mass(acc, "q", (hi, acc.level.xi_max)) == 0.0
    assert acc.m[:, -1, :].sum() + acc.lam[:, -1, :].sum() == 0.0


def test_measure_merge():
    acc1 = _acc()
    acc2 = _acc()
    acc1.m[0, 0, 0] = 1.0
    acc2.m[0, 0, 0] = 2.0
    acc2.nu[1, 1] = 0.5
    merged = acc1.merge(acc2)
    assert merged.m[0, 0, 0] == 3.0
    assert merged.nu[1, 1] == 0.5
    with pytest.raises(ValueError):
        acc1.merge(_acc(nbins=32))


def test_pairing_helpers():
    acc = _acc()
    acc.lam[2, 5, 1] = 0.7
    xi_c = acc.level.centers[5]
    val = pair_level_measure(acc, "lam", lambda x, xi, t: xi)
    assert val == pytest.approx(0.7 * xi_c)
    acc.nu[3, 2] = 0.4
    assert pair_reflection(acc, lambda x, t: np.ones_like(x * t)) == \
        pytest.approx(0.4)


# ---------------------------------------------------------------------------
# Defect identity

def test_defect_identity_affine_exact_and_no_contact_zero():
    cfg = preset_config("pm-contact", n=64, T=0.25)
    mesh = cfg.mesh()
    phis = (("xi", lambda x, xi: xi, lambda x, xi: np.ones_like(xi)),)
    da = DefectAssembler(phis, mesh, cfg.epsilon, upper=True)
    rec = run_trajectory(cfg, probes=(da,))
    lhs = rec.probe_results["DefectAssembler"]
    rhs = da.rhs_from_measure(rec.measures)
    assert lhs["xi"] > 0.0
    assert abs(lhs["xi"] - rhs["xi"]) < 1e-10 * abs(lhs["xi"])

    # obstacle far above the state: both sides identically zero
    cfg0 = preset_config("pm-contact", n=64, T=0.25, obstacle_kind="constant",
                         obstacle_base=5.0, obstacle_rate=0.0, xi_max=6.0)
    da0 = DefectAssembler(phis, mesh, cfg0.epsilon, upper=True)
    rec0 = run_trajectory(cfg0, probes=(da0,))
    assert rec0.probe_results["DefectAssembler"]["xi"] == 0.0
    assert da0.rhs_from_measure(rec0.measures)["xi"] == 0.0


# ---------------------------------------------------------------------------
# Test functions and residual bookkeeping

def test_bump_test_function_shape():
    p = KineticTestFunction("one", 0.2, 1.0, t_final=1.0)
    xi = np.linspace(0.0, 2.0, 401)
    eta = p.eta(xi)
    assert np.all(eta[(xi <= 0.2) | (xi >= 1.0)] == 0.0)
    assert eta.max() <= 1.0 + 1e-12
    # eta' consistent with a finite-difference check away from the edges
    d = 1e-6
    mid = np.linspace(0.3, 0.9, 50)
    fd = (p.eta(mid + d) - p.eta(mid - d)) / (2 * d)
    assert np.abs(fd - p.eta_prime(mid)).max() < 1e-5
    # antiderivative increases to the full integral
    assert p.eta_antideriv(2.0) == pytest.approx(
        np.trapezoid(eta, xi), rel=1e-6)
    assert p.a(1.0) == 0.0
    with pytest.raises(ValueError):
        KineticTestFunction("one", 0.5, 0.2, t_final=1.0)


def test_default_test_function_triple():
    phis = default_test_functions(1.0, 0.1, 0.9)
    assert [p.rho_kind for p in phis] == ["one", "cos", "sin"]
    assert len({p.label for p in phis}) == 3


def test_residual_term_bookkeeping():
    from obstaclesim.verify import kinetic_residuals
    reports = kinetic_residuals(preset_config("pm-contact", n=64, T=0.25))
    assert len(reports) == 3
    for rep in reports:
        # residual is exactly time-term minus the recombined rest
        assert rep.term_sum_check == 0.0
        assert set(rep.terms) == {"time", "initial", "diffusion", "noise_corr",
                                  "measure", "transport", "xi_corr",
                                  "obstacle", "martingale"}
