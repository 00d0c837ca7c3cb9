"""Property checks tying simulator output to the structural identities of the
penalized obstacle problem: mass balance, positivity, ordering in the penalty
scale, contraction, penalty decay, defect pairing, kinetic residuals, energy
balance, measure tails, and the initial trace.

Each check returns a CheckResult with the observed number, the tolerance it
was held to, and enough context to reproduce it.  Calibrated tolerances
(C_ref, C_fit) are always fitted on a coarser resolution than the one being
judged, never on the run under test.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import preset_config
from .kinetics import (DefectAssembler, KineticResidualAssembler,
                       default_test_functions, measure_window_mass)
from .solver import (ScenarioConfig, TrajectoryRecord, run_trajectory,
                     run_ensemble)

TOL_MASS_REL = 1e-10
TOL_NEG_REL = 1e-8
TOL_DEFECT_REL = 1e-10
PENALTY_SLOPE_MIN = 0.9
TAIL_DROP_MIN = 10.0


@dataclass
class CheckResult:
    check_id: str
    passed: bool
    observed: float
    tolerance: float
    details: str = ""
    context: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "pass" if self.passed else "FAIL"


# ---------------------------------------------------------------------------
# Pathwise identities

def check_mass_identity(rec: TrajectoryRecord, label: str = "") -> CheckResult:
    """|‖u(t)‖₁ + cumulative reflected mass − ‖u_init‖₁| at every step."""
    defect = np.abs(rec.mass_l1 + rec.reflected_cum - rec.mass_init)
    tol = TOL_MASS_REL * (1.0 + rec.mass_init)
    obs = float(defect.max())
    return CheckResult(f"mass-identity{label}", obs <= tol, obs, tol,
                       "max over steps of the discrete L1 balance defect")


def check_nonnegativity(recs, label: str = "") -> CheckResult:
    """min u over all paths and steps against -tol_neg."""
    recs = [recs] if isinstance(recs, TrajectoryRecord) else list(recs)
    sup = max(max(float(np.max(r.u0)), r.config.obstacle().bound)
              for r in recs)
    tol = TOL_NEG_REL * (1.0 + sup)
    obs = min(float(r.min_u.min()) for r in recs)
    return CheckResult(f"non-negativity{label}", obs >= -tol, obs, -tol,
                       f"min over {len(recs)} path(s) of min_x u")


def check_initial_trace(rec: TrajectoryRecord, taus=(0.1, 0.05, 0.025, 0.0125),
                        label: str = "") -> CheckResult:
    """(1/tau) * integral_0^tau ||u - u_init||_1 dt must shrink with tau."""
    cum = np.cumsum(rec.dist_to_init) * rec.dt
    vals = []
    for tau in sorted(taus, reverse=True):
        k = min(max(int(round(tau / rec.dt)), 1), rec.nsteps) - 1
        vals.append(cum[k] / ((k + 1) * rec.dt))
    diffs = np.diff(vals)  # ordered by decreasing tau: should be <= 0
    obs = float(diffs.max()) if len(diffs) else 0.0
    return CheckResult(f"initial-trace{label}", obs <= 0.0, obs, 0.0,
                       f"max increase of the time-averaged L1 distance over "
                       f"taus {sorted(taus, reverse=True)}",
                       context={"values": vals})


# ---------------------------------------------------------------------------
# Defect pairing and kinetic residual

def check_defect_identity(cfg: ScenarioConfig, label: str = "",
                          path_id: int | None = None):
    """Pairing of the reflection ledger against the obstacle defect measure.

    For affine-in-xi test functions the two sides agree structurally (same
    deposits read two ways); for phi = xi^2 the gap is bin-quadrature error.
    Returns (affine CheckResult, quadratic gap value).
    """
    mesh = cfg.mesh()
    phis = (("xi", lambda x, xi: xi, lambda x, xi: np.ones_like(xi)),
            ("xi2", lambda x, xi: xi ** 2, lambda x, xi: 2.0 * xi))
    da = DefectAssembler(phis, mesh, cfg.epsilon, cfg.side == "upper")
    rec = run_trajectory(cfg, path_id=path_id, probes=(da,))
    pairs = da.rhs_from_measure(rec.measures)
    lhs = rec.probe_results["DefectAssembler"]
    scale = max(abs(lhs["xi"]), 1e-14)
    obs = abs(lhs["xi"] - pairs["xi"]) / scale
    res = CheckResult(
        f"defect-identity{label}", obs <= TOL_DEFECT_REL, obs, TOL_DEFECT_REL,
        "relative gap, reflection ledger vs level-measure pairing, phi=xi",
        context={"lhs": lhs, "rhs": pairs})
    quad_gap = abs(lhs["xi2"] - pairs["xi2"]) / max(abs(lhs["xi2"]), 1e-14)
    return res, quad_gap


def check_defect_refinement(cfg: ScenarioConfig, bins=(64, 256),
                            label: str = "") -> CheckResult:
    """phi = xi^2 pairing gap must shrink at slope >= 1 in the xi bin width."""
    gaps = []
    for nb in bins:
        _, quad = check_defect_identity(replace(cfg, xi_bins=nb))
        gaps.append(max(quad, 1e-16))
    slope = np.log(gaps[0] / gaps[-1]) / np.log(bins[-1] / bins[0])
    return CheckResult(f"defect-refinement{label}", slope >= 1.0,
                       float(slope), 1.0,
                       f"xi-bin refinement slope of the phi=xi^2 gap, "
                       f"bins {list(bins)}", context={"gaps": gaps})


def kinetic_residuals(cfg: ScenarioConfig, path_id: int | None = None):
    """Weak-form residual reports for the standard test-function triple."""
    mesh = cfg.mesh()
    from .solver import build_noise
    nz = build_noise(cfg, mesh)
    lg = cfg.level_grid(mesh)
    phis = default_test_functions(cfg.T, 0.05 * lg.xi_max, 0.95 * lg.xi_max)
    ka = KineticResidualAssembler(phis, mesh, cfg.coefficients(), nz.ff,
                                  nz.modes, cfg.epsilon, cfg.alpha,
                                  cfg.side == "upper")
    run_trajectory(cfg, path_id=path_id, probes=(ka,), deposit=False)
    return ka.finish()


def check_kinetic_residual_deterministic(cfg: ScenarioConfig,
                                         label: str = "") -> CheckResult:
    """Noise-free runs: residual must shrink at slope >= 1 under
    (h, dt) -> (h/2, dt/4)."""
    coarse = kinetic_residuals(cfg)
    fine = kinetic_residuals(replace(cfg, n=2 * cfg.n))
    slopes = {}
    for rc, rf in zip(coarse, fine):
        if abs(rc.residual) < 1e-12 and abs(rf.residual) < 1e-12:
            # both at rounding floor (e.g. a test function odd under a
            # symmetry of the run): already converged
            slopes[rc.phi_label] = np.inf
            continue
        num = max(abs(rc.residual), 1e-16)
        den = max(abs(rf.residual), 1e-16)
        slopes[rc.phi_label] = float(np.log2(num / den))
    obs = min(slopes.values())
    return CheckResult(f"kinetic-residual-deterministic{label}", obs >= 1.0,
                       obs, 1.0,
                       "min over test functions of the (h,dt)->(h/2,dt/4) "
                       "residual halving slope", context={"slopes": slopes})


def check_kinetic_residual_noisy(cfg: ScenarioConfig,
                                 label: str = "") -> CheckResult:
    """Noisy runs: residual at the fine level must sit inside a constant
    fitted at half resolution, C_fit * (dt + h^2)."""
    coarse_cfg = replace(cfg, n=cfg.n // 2)
    coarse = kinetic_residuals(coarse_cfg)
    rec_c = run_trajectory(coarse_cfg, deposit=False)
    scale_c = rec_c.dt + (1.0 / coarse_cfg.n) ** 2
    c_fit = 3.0 * max(abs(r.residual) for r in coarse) / scale_c

    fine = kinetic_residuals(cfg)
    rec_f = run_trajectory(cfg, deposit=False)
    tol = c_fit * (rec_f.dt + (1.0 / cfg.n) ** 2)
    obs = max(abs(r.residual) for r in fine)
    return CheckResult(f"kinetic-residual-noisy{label}", obs <= tol, obs, tol,
                       f"max residual over test functions vs C_fit*(dt+h^2), "
                       f"C_fit={c_fit:.3g} from n={coarse_cfg.n}",
                       context={"residuals": {r.phi_label: r.residual
                                              for r in fine}})


# ---------------------------------------------------------------------------
# Ordering, contraction, penalty decay

def _coupled_pair(cfg_a: ScenarioConfig, cfg_b: ScenarioConfig):
    ra = run_trajectory(cfg_a, record_full=True, deposit=False)
    rb = run_trajectory(cfg_b, record_full=True, deposit=False)
    if ra.nsteps != rb.nsteps or abs(ra.dt - rb.dt) > 1e-15 * ra.dt:
        raise RuntimeError(
            "coupled runs drifted onto different time grids "
            f"({ra.nsteps}@{ra.dt} vs {rb.nsteps}@{rb.dt}); they no longer "
            "consume identical noise increments")
    return ra, rb


def epsilon_violation(cfg: ScenarioConfig, eps_lo: float,
                      eps_hi: float) -> float:
    """Max over recorded (t, cell) of (u_{eps_lo} - u_{eps_hi})^+ for
    noise-coupled runs (upper side: smaller eps pushes the state down)."""
    r_lo, r_hi = _coupled_pair(replace(cfg, epsilon=eps_lo),
                               replace(cfg, epsilon=eps_hi))
    gap = r_lo.u_records - r_hi.u_records
    if cfg.side != "upper":
        gap = -gap
    return float(np.maximum(gap, 0.0).max())


def check_epsilon_monotonicity(cfg: ScenarioConfig, eps_pair=(0.02, 0.1),
                               label: str = "") -> CheckResult:
    """Ordering violation bounded by C_ref*(dt+h) (C_ref from the coarse
    level) and halving under (h, dt) -> (h/2, dt/4)."""
    eps_lo, eps_hi = min(eps_pair), max(eps_pair)
    coarse = replace(cfg, n=cfg.n // 2)
    v_c = epsilon_violation(coarse, eps_lo, eps_hi)
    v_f = epsilon_violation(cfg, eps_lo, eps_hi)
    dt_c = run_trajectory(coarse, deposit=False).dt
    dt_f = run_trajectory(cfg, deposit=False).dt
    c_ref = 1.5 * max(v_c, 1e-14) / (dt_c + 1.0 / coarse.n)
    tol = c_ref * (dt_f + 1.0 / cfg.n)
    ratio = v_f / max(v_c, 1e-14)
    passed = (v_f <= tol) and (ratio <= 0.6)
    return CheckResult(f"epsilon-monotonicity{label}", passed, v_f, tol,
                       f"violation at n={cfg.n} (coarse n={coarse.n}: "
                       f"{v_c:.3g}, refinement ratio {ratio:.3f} <= 0.6)",
                       context={"violation_coarse": v_c, "ratio": ratio})


def check_l1_contraction(cfg: ScenarioConfig, offset: float = -0.1,
                         tol_factor: float = 5.0,
                         label: str = "") -> CheckResult:
    """Two solutions with shifted initial data under shared noise:
    d(t) = ||u1 - u2||_1 stays below d(0), decays monotonically up to
    tol_contr, and strictly contracts once the obstacle binds."""
    cfg2 = replace(cfg, init_base=cfg.init_base + offset)
    r1, r2 = _coupled_pair(cfg, cfg2)
    h = 1.0 / cfg.n
    d = h * np.abs(r1.u_records - r2.u_records).sum(axis=1)
    d0 = h * float(np.abs(r1.u0 - r2.u0).sum())
    tol = tol_factor * (r1.dt + h)
    binds = float(r1.reflected_cum[-1] + r2.reflected_cum[-1]) > 1e-8
    grow = float(np.diff(np.r_[d0, d]).max())
    obs = max(float(d.max()) - d0, grow)
    passed = obs <= tol and (not binds or d[-1] < d0)
    detail = (f"max excess over d(0) / max single-record growth; obstacle "
              f"{'binds' if binds else 'never binds'}, d(T)/d(0) = "
              f"{d[-1] / d0:.4f}")
    return CheckResult(f"l1-contraction{label}", passed, obs, tol, detail,
                       context={"d0": d0, "dT": float(d[-1])})


@dataclass
class EpsilonStudyReport:
    eps: list
    penalty_l1: list            # ||(u_eps - psi)^+||_{L1(Q_T)} per eps
    slope: float                # log-log decay rate, target >= 0.9
    violations: list            # pairwise coupled ordering violations
    nu_cauchy: list             # ||nu_{e_i} - nu_{e_{i+1}}||_1 per adjacent pair
    lam_totals: list            # lambda(Q) per eps
    monotone: bool

    def as_rows(self):
        rows = []
        for i, e in enumerate(self.eps):
            rows.append({"epsilon": e, "penalty_l1": self.penalty_l1[i],
                         "lam_total": self.lam_totals[i]})
        return rows


def epsilon_study(cfg: ScenarioConfig,
                  eps_list=(0.1, 0.05, 0.025, 0.0125)) -> EpsilonStudyReport:
    """Coupled-noise sweep in the penalty scale on one scenario."""
    eps_list = sorted(eps_list, reverse=True)
    recs = []
    for e in eps_list:
        rec = run_trajectory(replace(cfg, epsilon=e), record_full=True)
        recs.append(rec)
    pen = [float(np.sum(r.excess_l1) * r.dt) for r in recs]
    le, lp = np.log(eps_list), np.log(np.maximum(pen, 1e-300))
    slope = float(np.polyfit(le, lp, 1)[0])
    sgn = 1.0 if cfg.side == "upper" else -1.0
    violations, nu_cauchy = [], []
    for r_hi, r_lo in zip(recs, recs[1:]):  # eps decreasing: hi then lo
        gap = sgn * (r_lo.u_records - r_hi.u_records)
        violations.append(float(np.maximum(gap, 0.0).max()))
        nu_cauchy.append(float(np.abs(r_lo.measures.nu
                                      - r_hi.measures.nu).sum()))
    lam_totals = [float(r.measures.total("lam")) for r in recs]
    return EpsilonStudyReport(list(eps_list), pen, slope, violations,
                              nu_cauchy, lam_totals,
                              monotone=bool(np.all(np.diff(pen) < 0.0)))


def check_penalty_decay(cfg: ScenarioConfig,
                        eps_list=(0.1, 0.05, 0.025, 0.0125),
                        label: str = "") -> CheckResult:
    study = epsilon_study(cfg, eps_list)
    passed = study.slope >= PENALTY_SLOPE_MIN and study.monotone
    return CheckResult(f"penalty-decay{label}", passed, study.slope,
                       PENALTY_SLOPE_MIN,
                       f"log-log slope of the excess L1 norm over eps "
                       f"{study.eps}; monotone={study.monotone}",
                       context={"penalty_l1": study.penalty_l1})


def check_penalty_ode_exact(label: str = "") -> CheckResult:
    """Constant obstacle, constant initial state: the excess L1 norm has the
    closed form eps*(a-c)*(1-exp(-T/eps))."""
    cfg = preset_config("ode-contact")
    rec = run_trajectory(cfg)
    observed = float(np.sum(rec.excess_l1) * rec.dt)
    a, c = cfg.init_base, cfg.obstacle_base
    eps = cfg.epsilon
    exact = eps * (a - c) * (1.0 - np.exp(-cfg.T / eps))
    obs = abs(observed - exact) / exact
    return CheckResult(f"penalty-ode-exact{label}", obs <= 1e-6, obs, 1e-6,
                       f"relative error vs the analytic relaxation value "
                       f"{exact:.6g}")


# ---------------------------------------------------------------------------
# Energy identity (in expectation)

def energy_residual(rec: TrajectoryRecord) -> float:
    """Pathwise energy-balance residual; its expectation vanishes to
    O(dt + h^2).

    d/dt (1/2)||u||^2 = -dissipation - penalty work + noise injection
    + martingale, with the injection rate (1/4) * int sigma_n(u)^2
    (2 F3 - div F2) after the Stratonovich correction cancels the rest.
    """
    h = 1.0 / rec.config.n
    e2_0 = h * float(np.sum(rec.u0 ** 2))
    dt = rec.dt
    d = rec.diag
    dissip = float(np.sum(d[:, 8])) * dt
    pen = float(np.sum(d[:, 6] + d[:, 7])) * dt / rec.config.epsilon
    ncorr = 0.25 * float(np.sum(d[:, 9])) * dt
    return 0.5 * (float(d[-1, 1]) - e2_0) + dissip + pen + ncorr


def check_energy_identity(cfg: ScenarioConfig, n_paths: int = 64,
                          pilot_paths: int = 16,
                          label: str = "") -> CheckResult:
    """|mean residual| <= 3*SE + C_fit*(dt+h^2), C_fit from a
    half-resolution pilot ensemble."""
    pilot_cfg = replace(cfg, n=cfg.n // 2)
    pilot = [energy_residual(run_trajectory(pilot_cfg, path_id=p,
                                            deposit=False))
             for p in range(pilot_paths)]
    dt_p = run_trajectory(pilot_cfg, deposit=False).dt
    c_fit = 2.0 * abs(float(np.mean(pilot))) / (dt_p + (1.0 / pilot_cfg.n) ** 2)

    res = np.array([energy_residual(run_trajectory(cfg, path_id=p,
                                                   deposit=False))
                    for p in range(n_paths)])
    dt = run_trajectory(cfg, deposit=False).dt
    se = float(res.std(ddof=1) / np.sqrt(n_paths))
    tol = 3.0 * se + c_fit * (dt + (1.0 / cfg.n) ** 2)
    obs = abs(float(res.mean()))
    return CheckResult(f"energy-identity{label}", obs <= tol, obs, tol,
                       f"|mean over {n_paths} paths| vs 3*SE ({3*se:.3g}) + "
                       f"C_fit*(dt+h^2) with C_fit={c_fit:.3g} from n="
                       f"{pilot_cfg.n}",
                       context={"mean": float(res.mean()), "se": se})


# ---------------------------------------------------------------------------
# Kinetic measure tails

def tail_report(rec: TrajectoryRecord,
                betas=(0.2, 0.1, 0.05, 0.025)) -> dict:
    """Low-level mass q([beta/2, beta])/beta and high-level support data."""
    acc = rec.measures
    series = [measure_window_mass(acc, "q", (b / 2.0, b)) / b for b in betas]
    running_min = list(np.minimum.accumulate(series))
    M = rec.config.obstacle().bound
    hi_lo = float(np.ceil(M) + 1.0)
    if hi_lo < acc.level.xi_max:
        high_mass = measure_window_mass(acc, "q", (hi_lo, acc.level.xi_max))
    else:
        high_mass = 0.0
    high_mass += float(acc.m[:, -1, :].sum() + acc.lam[:, -1, :].sum())
    return {"betas": list(betas), "series": series,
            "running_min": running_min, "support_bound": hi_lo,
            "high_mass": float(high_mass),
            "overflow": int(acc.overflow_count)}


def check_measure_tails(rec: TrajectoryRecord, label: str = "") -> CheckResult:
    rep = tail_report(rec)
    drop = rep["running_min"][0] / max(rep["running_min"][-1], 1e-300) \
        if rep["running_min"][0] > 0 else np.inf
    passed = (drop >= TAIL_DROP_MIN and rep["high_mass"] == 0.0
              and rep["overflow"] == 0)
    return CheckResult(
        f"measure-tails{label}", passed, float(min(drop, 1e300)),
        TAIL_DROP_MIN,
        f"low-level running-min drop across betas {rep['betas']}; mass above "
        f"level {rep['support_bound']} = {rep['high_mass']:.3g}, overflow "
        f"deposits = {rep['overflow']}", context=rep)


# ---------------------------------------------------------------------------
# Suites

def fast_suite(master_seed: int = 0):
    """Cheap structural checks on reduced resolutions (seconds)."""
    results = []
    for name in ("pm-contact", "heat-contact", "fast-diffusion"):
        cfg = preset_config(name, n=128, T=0.5, master_seed=master_seed)
        rec = run_trajectory(cfg)
        results.append(check_mass_identity(rec, f":{name}"))
        results.append(check_nonnegativity(rec, f":{name}"))
        results.append(check_initial_trace(rec, taus=(0.1, 0.05, 0.025),
                                           label=f":{name}"))
        res, _ = check_defect_identity(cfg, f":{name}")
        results.append(res)
    results.append(check_penalty_ode_exact())
    results.append(check_measure_tails(
        run_trajectory(preset_config("pm-contact", n=128,
                                     master_seed=master_seed)),
        ":pm-contact"))
    return results


def full_suite(master_seed: int = 0):
    """Everything in the acceptance gate, at acceptance resolutions."""
    results = []
    presets = ("pm-contact", "heat-contact", "fast-diffusion")
    for name in presets:
        cfg = preset_config(name, master_seed=master_seed)
        rec = run_trajectory(cfg)
        results.append(check_mass_identity(rec, f":{name}"))
        results.append(check_initial_trace(rec, label=f":{name}"))
        small = preset_config(name, n=128, master_seed=master_seed)
        res, _ = check_defect_identity(small, f":{name}")
        results.append(res)
        if name == "pm-contact":
            results.append(check_measure_tails(rec, f":{name}"))

    pm = preset_config("pm-contact", n=128, master_seed=master_seed)
    _, recs = run_ensemble(replace(pm, T=0.5), 16, keep_records=True,
                           deposit=False)
    results.append(check_nonnegativity(recs, ":pm-contact-ensemble"))
    results.append(check_defect_refinement(replace(pm, T=0.5), label=":pm-contact"))
    results.append(check_epsilon_monotonicity(pm, label=":pm-contact"))
    results.append(check_l1_contraction(pm, label=":pm-contact"))
    results.append(check_penalty_decay(pm, label=":pm-contact"))
    results.append(check_penalty_ode_exact())
    heat = preset_config("heat-contact", n=64, T=0.5, master_seed=master_seed)
    results.append(check_kinetic_residual_deterministic(heat, ":heat-contact"))
    results.append(check_kinetic_residual_noisy(replace(pm, T=0.5),
                                                ":pm-contact"))
    results.append(check_energy_identity(replace(pm, T=0.5),
                                         label=":pm-contact"))
    return results
