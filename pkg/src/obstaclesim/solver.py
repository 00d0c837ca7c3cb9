"""Explicit time stepping of the penalized equation with implicit penalty.

One step is Euler-Maruyama in Ito form with the explicit Stratonovich
correction flux, followed by the closed-form pointwise implicit penalty
projection (so epsilon << dt is reachable).  All deterministic and noise
transport is assembled as face fluxes: the discrete mass identity

    h sum u_new  =  h sum u_old  -  h sum r

holds to rounding at every step (r the reflected-mass increment).

dt is chosen once, before stepping, from a CFL bound evaluated on an a-priori
state band (so runs coupled through the noise key also share their time grid
and consume identical Brownian increments step by step).
"""

from __future__ import annotations

import concurrent.futures
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .grid import LevelGrid, Mesh, default_level_grid, divergence, face_gradient
from .kinetics import LevelMeasure
from .model import CoefficientSet, ObstacleSpec, eval_obstacle, make_coefficients
from .noise import (FFields, ModeSet, RngKey, build_mode_set, compute_f_fields,
                    default_mode_specs, sample_increment_block,
                    single_mode_specs)

CHUNK_STEPS = 4096


class NumericalAbort(RuntimeError):
    """Raised when the state leaves the finite/feasible regime mid-run."""

    def __init__(self, message, t=None, step=None, last_state=None):
        super().__init__(message)
        self.t = t
        self.step = step
        self.last_state = last_state


@dataclass(frozen=True)
class ScenarioConfig:
    # mesh / level grid
    n: int = 128
    xi_bins: int = 64
    xi_max: float | None = None
    # time
    T: float = 1.0
    cfl: float = 0.25
    dt_fixed: float | None = None
    record_every: float = 0.005
    t_bins: int = 16
    snapshot_times: tuple = ()
    # coefficients
    m: float = 1.0
    sigma_kind: str = "sqrt_phi"
    sigma_scale: float = 1.0
    sigma_power: float | None = None
    g_kind: str = "zero"
    g_coeff: float = 0.0
    delta_reg: float = 1e-3
    p: float = 2.0
    # obstacle
    obstacle_kind: str = "constant"
    obstacle_base: float = 1.0
    obstacle_amplitude: float = 0.0
    obstacle_wavenumber: int = 1
    obstacle_speed: float = 0.0
    obstacle_rate: float = 0.0
    side: str = "upper"
    # noise
    modes: int = 0
    noise_amplitude: float = 0.0
    amplitude_decay: float = 1.0
    pairing: str = "homogeneous"
    # penalty / approximation layer
    epsilon: float = 0.1
    alpha: float = 0.0
    # initial data
    init_kind: str = "cosine"
    init_base: float = 0.5
    init_amplitude: float = 0.0
    init_wavenumber: int = 1
    # seeds
    master_seed: int = 0
    path_id: int = 0
    # validation escape hatch for analytic scenarios starting above psi
    allow_init_above_obstacle: bool = False

    # ------------------------------------------------------------------
    def mesh(self) -> Mesh:
        return Mesh(self.n)

    def coefficients(self) -> CoefficientSet:
        return make_coefficients(self.m, self.sigma_kind, self.g_kind,
                                 self.delta_reg, self.sigma_scale,
                                 self.sigma_power, self.g_coeff, self.p)

    def obstacle(self) -> ObstacleSpec:
        return ObstacleSpec(self.obstacle_kind, self.obstacle_base,
                            self.obstacle_amplitude, self.obstacle_wavenumber,
                            self.obstacle_speed, self.obstacle_rate,
                            self.side, self.T)

    def mode_specs(self):
        if self.modes == 0 or self.noise_amplitude == 0.0:
            return []
        if self.pairing == "homogeneous":
            return default_mode_specs(self.modes, self.noise_amplitude,
                                      self.amplitude_decay)
        return single_mode_specs(self.modes, self.noise_amplitude,
                                 self.amplitude_decay)

    def u_init(self, mesh: Mesh) -> np.ndarray:
        x = mesh.cell_centers
        w = 2.0 * math.pi * self.init_wavenumber
        if self.init_kind == "constant":
            u0 = np.full(mesh.n, self.init_base)
        elif self.init_kind == "cosine":
            u0 = self.init_base + self.init_amplitude * np.cos(w * x)
        elif self.init_kind == "sine":
            u0 = self.init_base + self.init_amplitude * np.sin(w * x)
        else:
            raise ValueError(f"unknown init kind {self.init_kind!r}")
        return u0

    def level_grid(self, mesh: Mesh) -> LevelGrid:
        u0max = float(np.max(self.u_init(mesh)))
        return default_level_grid(self.obstacle().bound, u0max,
                                  nbins=self.xi_bins, xi_max=self.xi_max)

    def validate(self) -> None:
        if not (0.0 < self.epsilon <= 1.0):
            raise ValueError(f"[penalty].epsilon must lie in (0, 1], got {self.epsilon}")
        if self.alpha < 0.0:
            raise ValueError(f"[penalty].alpha must be nonnegative, got {self.alpha}")
        if self.T <= 0.0:
            raise ValueError(f"[time].T must be positive, got {self.T}")
        mesh = self.mesh()
        self.coefficients()
        obst = self.obstacle()
        u0 = self.u_init(mesh)
        if np.any(u0 < 0.0):
            raise ValueError("[init]: initial data must be nonnegative")
        psi0 = eval_obstacle(obst, mesh, 0.0)
        if self.side == "upper" and not self.allow_init_above_obstacle:
            if np.any(u0 > psi0 + 1e-12):
                i = int(np.argmax(u0 - psi0))
                raise ValueError(
                    "[init]: initial data exceeds the obstacle at t=0 "
                    f"(cell {i}: u={u0[i]:.6g} > psi={psi0[i]:.6g}); upper-side "
                    "runs require u_init <= psi(.,0)")
        for idx, spec in enumerate(self.mode_specs()):
            if spec.wavenumber > self.n // 4:
                raise ValueError(f"[noise]: mode {idx} unresolvable on n={self.n}")


@dataclass(frozen=True)
class NoiseFields:
    modes: ModeSet
    ff: FFields


def build_noise(cfg: ScenarioConfig, mesh: Mesh) -> NoiseFields:
    modes = build_mode_set(cfg.mode_specs(), mesh)
    return NoiseFields(modes, compute_f_fields(modes, mesh))


# ---------------------------------------------------------------------------
# Python-level single operations (unit-test mirrors of the kernel arithmetic)


def assemble_drift(mesh: Mesh, u: np.ndarray, cs: CoefficientSet, ff: FFields,
                   alpha: float) -> np.ndarray:
    """Deterministic drift divergence(flux); penalty excluded."""
    if not np.all(np.isfinite(u)):
        raise NumericalAbort(f"non-finite state at cell {int(np.argmin(np.isfinite(u)))}")
    um1 = np.roll(u, 1)
    uf = 0.5 * (u + um1)
    gradu = (u - um1) / mesh.h
    snp = cs.sigma_n_prime(uf)
    flux = (face_gradient(mesh, cs.phi(u))
            + alpha * gradu
            + 0.5 * (ff.F1_faces * snp ** 2 * gradu
                     + cs.sigma_n(uf) * snp * ff.F2_faces)
            - cs.g(uf))
    return divergence(mesh, flux)


def noise_divergence(mesh: Mesh, u: np.ndarray, cs: CoefficientSet,
                     modes: ModeSet, incr: np.ndarray) -> np.ndarray:
    """-div(sigma_n(u) f_k dB^k) assembled at faces."""
    if len(incr) != modes.K:
        raise ValueError(f"expected {modes.K} increments, got {len(incr)}")
    uf = 0.5 * (u + np.roll(u, 1))
    nflux = cs.sigma_n(uf) * (modes.f_faces.T @ incr) if modes.K \
        else np.zeros(mesh.n)
    return -divergence(mesh, nflux)


def penalty_project(u_star: np.ndarray, psi: np.ndarray, dt: float,
                    eps: float, side: str = "upper"):
    """Closed-form solve of v + (dt/eps)(v - psi)^+ = u* (upper; mirrored
    for lower).  Returns (v, reflected increment r >= 0)."""
    if dt <= 0 or eps <= 0:
        raise ValueError("dt and eps must be positive")
    lam = dt / eps
    if side == "upper":
        v = np.where(u_star > psi, (u_star + lam * psi) / (1.0 + lam), u_star)
        return v, u_star - v
    v = np.where(u_star < psi, (u_star + lam * psi) / (1.0 + lam), u_star)
    return v, v - u_star


def compute_stable_dt(cfg: ScenarioConfig, mesh: Mesh, ff: FFields) -> float:
    """A-priori CFL bound on a state band, fixed for the whole run."""
    if cfg.dt_fixed is not None:
        nsteps = max(int(math.ceil(cfg.T / cfg.dt_fixed)), 1)
        return cfg.T / nsteps
    cs = cfg.coefficients()
    u0 = cfg.u_init(mesh)
    band_lo = max(0.25 * float(np.min(u0)), 1e-3)
    band_hi = 1.1 * max(float(np.max(u0)), cfg.obstacle().bound, 1e-3)
    xs = np.linspace(band_lo, band_hi, 512)
    f1max = float(np.max(ff.F1_faces)) if ff.F1_faces.size else 0.0
    denom = float(np.max(cs.phi_prime_clamped(xs) + cfg.alpha
                         + 0.5 * f1max * cs.sigma_n_prime(xs) ** 2))
    dt = cfg.cfl * mesh.h ** 2 / max(denom, 1e-12)
    dt = min(dt, cfg.record_every, cfg.T)
    nsteps = max(int(math.ceil(cfg.T / dt)), 1)
    return cfg.T / nsteps


def _psi_block(obst: ObstacleSpec, x: np.ndarray, times: np.ndarray) -> np.ndarray:
    if obst.kind in ("constant", "trig_in_x"):
        row = obst.eval(x, 0.0)
        return np.broadcast_to(row, (len(times), len(x))).copy()
    if obst.kind == "time_ramp":
        return obst.base + obst.rate * times[:, None] \
            + np.zeros((1, len(x)))
    out = np.empty((len(times), len(x)))
    for s, t in enumerate(times):
        out[s] = obst.eval(x, float(t))
    return out


# ---------------------------------------------------------------------------
# Trajectories


@dataclass
class TrajectoryRecord:
    config: ScenarioConfig
    dt: float
    nsteps: int
    times: np.ndarray            # t after each step, length nsteps
    diag: np.ndarray             # (nsteps, NDIAG) per-step diagnostics
    u0: np.ndarray
    u_final: np.ndarray
    measures: LevelMeasure
    snapshots: dict = field(default_factory=dict)   # t -> (u, psi)
    probe_results: dict = field(default_factory=dict)
    record_idx: np.ndarray = None
    u_records: np.ndarray = None   # (len(record_idx), n) when record_full

    @property
    def mass_init(self) -> float:
        return float(np.sum(self.u0)) / self.config.n

    @property
    def mass_l1(self) -> np.ndarray:
        return self.diag[:, 0]

    @property
    def energy_l2sq(self) -> np.ndarray:
        return self.diag[:, 1]

    @property
    def min_u(self) -> np.ndarray:
        return self.diag[:, 2]

    @property
    def reflected_cum(self) -> np.ndarray:
        return np.cumsum(self.diag[:, 3])

    @property
    def penalty_l1(self) -> np.ndarray:
        """|| eps^-1 (u - psi)^+ ||_L1 time series."""
        return self.diag[:, 5] / self.config.epsilon

    @property
    def excess_l1(self) -> np.ndarray:
        return self.diag[:, 5]

    @property
    def dist_to_init(self) -> np.ndarray:
        return self.diag[:, 4]

    def recorded(self, series: np.ndarray) -> np.ndarray:
        return series[self.record_idx]

    @property
    def recorded_times(self) -> np.ndarray:
        return self.times[self.record_idx]


def run_trajectory(cfg: ScenarioConfig, path_id: int | None = None,
                   probes=(), record_full: bool = False,
                   deposit: bool = True) -> TrajectoryRecord:
    """Step from 0 to T, depositing measures and feeding optional probes.

    deposit=False skips level-measure accumulation (the diagnostics in diag,
    including the reflection ledger, are unaffected); use it for runs that
    only need time series.

    Bit-reproducible for fixed (config, master_seed, path_id), independent of
    chunking and thread count.
    """
    cfg.validate()
    if path_id is None:
        path_id = cfg.path_id
    mesh = cfg.mesh()
    cs = cfg.coefficients()
    obst = cfg.obstacle()
    nz = build_noise(cfg, mesh)
    lg = cfg.level_grid(mesh)
    dt = compute_stable_dt(cfg, mesh, nz.ff)
    nsteps = int(round(cfg.T / dt))
    key = RngKey(cfg.master_seed, path_id)

    u = cfg.u_init(mesh).astype(float)
    u0 = u.copy()
    acc = LevelMeasure(lg, mesh.n, mesh.h, cfg.T, cfg.t_bins)
    diag = np.empty((nsteps, kernels.NDIAG))
    upper = cfg.side == "upper"
    K = nz.modes.K

    snap_steps = {}
    for ts in cfg.snapshot_times:
        idx = min(max(int(round(ts / dt)) - 1, 0), nsteps - 1)
        snap_steps.setdefault(idx, float(ts))
    snapshots = {}

    for p in probes:
        p.start(u0)

    x = mesh.cell_centers
    step0 = 0
    overflow = 0
    stride = max(int(round(cfg.record_every / dt)), 1)
    record_idx = np.unique(np.r_[np.arange(0, nsteps, stride), nsteps - 1])
    u_records = np.empty((len(record_idx), mesh.n)) if record_full else None
    u_buf = np.empty((min(CHUNK_STEPS, nsteps), mesh.n))
    while step0 < nsteps:
        S = min(CHUNK_STEPS, nsteps - step0)
        t0 = step0 * dt
        t_next = t0 + dt * np.arange(1, S + 1)
        dB = sample_increment_block(key, step0, S, K, dt) if K \
            else np.zeros((S, 0))
        psi_chunk = _psi_block(obst, x, t_next)
        tbin = np.minimum((t_next / acc.dt_bin).astype(np.int64),
                          acc.n_tbins - 1)
        u_prev = u.copy() if probes else None
        ov = kernels.run_chunk(
            u, dB, psi_chunk, tbin, nz.modes.f_faces, nz.ff.F1_faces,
            nz.ff.F2_faces, nz.ff.F3_cells, nz.ff.divF2_cells, mesh.h, dt,
            cfg.epsilon, cfg.alpha, upper, cs.m, cs.delta_reg, cs.s_sig,
            cs.q_sig, cs.s_g, cs.q_g, lg.xi_max, lg.nbins, acc.m, acc.lam,
            acc.nu, diag[step0:step0 + S], u_buf[:S], deposit, u0)
        overflow += ov
        if not np.all(np.isfinite(u)):
            raise NumericalAbort("state became non-finite",
                                 t=t0 + S * dt, step=step0 + S, last_state=u.copy())
        if probes:
            u_before = np.vstack([u_prev[None, :], u_buf[:S - 1]])
            for p in probes:
                p.consume(t0, dt, u_before, u_buf[:S], psi_chunk, dB)
        for idx, ts in snap_steps.items():
            if step0 <= idx < step0 + S:
                snapshots[ts] = (u_buf[idx - step0].copy(),
                                 psi_chunk[idx - step0].copy())
        if record_full:
            sel = np.nonzero((record_idx >= step0) & (record_idx < step0 + S))[0]
            if sel.size:
                u_records[sel] = u_buf[record_idx[sel] - step0]
        step0 += S

    acc.overflow_count += overflow
    times = dt * np.arange(1, nsteps + 1)
    probe_results = {type(p).__name__: p.finish() for p in probes}
    return TrajectoryRecord(cfg, dt, nsteps, times, diag, u0, u.copy(), acc,
                            snapshots, probe_results, record_idx, u_records)


# ---------------------------------------------------------------------------
# Ensembles


@dataclass
class EnsembleStats:
    """Streaming mean / squared-deviation reduction (Chan's pairwise update;
    identical paths yield exactly zero standard error)."""

    times: np.ndarray
    count: int
    means: dict      # series name -> running mean (at recorded times)
    m2s: dict        # series name -> sum of squared deviations

    def mean(self, name: str) -> np.ndarray:
        return self.means[name]

    def sem(self, name: str) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.means[name])
        var = self.m2s[name] / (self.count - 1)
        return np.sqrt(var / self.count)

    def merge(self, other: "EnsembleStats") -> "EnsembleStats":
        if len(self.times) != len(other.times) or \
                not np.allclose(self.times, other.times):
            raise ValueError("cannot merge ensembles on different time grids")
        tot = self.count + other.count
        means, m2s = {}, {}
        for k in self.means:
            delta = other.means[k] - self.means[k]
            means[k] = self.means[k] + delta * (other.count / tot)
            m2s[k] = self.m2s[k] + other.m2s[k] \
                + delta * delta * (self.count * other.count / tot)
        return EnsembleStats(self.times, tot, means, m2s)


_SERIES = ("mass_l1", "energy_l2sq", "min_u", "penalty_l1", "reflected_cum",
           "excess_l1")


def stats_from_record(rec: TrajectoryRecord) -> EnsembleStats:
    means, m2s = {}, {}
    for name in _SERIES:
        s = rec.recorded(getattr(rec, name))
        means[name] = s.copy()
        m2s[name] = np.zeros_like(s)
    return EnsembleStats(rec.recorded_times, 1, means, m2s)


def worker_count() -> int:
    try:
        return max(int(os.environ.get("SIM_THREADS", "1")), 1)
    except ValueError:
        return 1


def run_ensemble(cfg: ScenarioConfig, n_paths: int, probes_factory=None,
                 keep_records: bool = False, deposit: bool = True):
    """Monte-Carlo ensemble over path ids 0..n_paths-1.

    Results are reduced in path order, so they are independent of the worker
    count.  Returns (EnsembleStats, records) with records empty unless
    keep_records.
    """
    if n_paths < 1:
        raise ValueError("need at least one path")

    def one(pid):
        probes = probes_factory(cfg) if probes_factory else ()
        return run_trajectory(cfg, path_id=pid, probes=probes, deposit=deposit)

    workers = worker_count()
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(one, range(n_paths)))
    else:
        records = [one(pid) for pid in range(n_paths)]

    stats = stats_from_record(records[0])
    for rec in records[1:]:
        stats = stats.merge(stats_from_record(rec))
    return stats, (records if keep_records else [])
