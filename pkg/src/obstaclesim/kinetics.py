"""Kinetic function, level measures, and weak-formulation diagnostics.

Three nonnegative measures are accumulated while stepping:

  m   parabolic component, nearest-bin deposit of (Phi'+alpha)|grad u|^2 at
      level xi = u(x,t);
  lam obstacle component: when the state exceeds the obstacle by e, density
      e/eps per unit level spread exactly (interval overlap against bin
      edges) over the segment between psi and u;
  nu  reflection ledger over (cell, time-bin), no level axis.

q := m + lam is computed on demand.  The exact-overlap spreading makes the
pairing of lam with any level-affine test function machine-precision equal to
the reflection-side pairing (the phi = xi defect identity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import LevelGrid, Mesh

TWO_PI = 2.0 * math.pi


def kinetic_indicator(u_val: float, xi: float) -> int:
    """chi(u, xi) = 1 iff 0 < xi < u."""
    return 1 if 0.0 < xi < u_val else 0


# ---------------------------------------------------------------------------
# Accumulator


@dataclass
class LevelMeasure:
    level: LevelGrid
    n_cells: int
    h: float
    t_final: float
    n_tbins: int
    m: np.ndarray = field(default=None)     # (n, nbins+1, nt)
    lam: np.ndarray = field(default=None)
    nu: np.ndarray = field(default=None)    # (n, nt)
    overflow_count: int = 0

    def __post_init__(self):
        nb = self.level.nbins
        if self.m is None:
            self.m = np.zeros((self.n_cells, nb + 1, self.n_tbins))
        if self.lam is None:
            self.lam = np.zeros((self.n_cells, nb + 1, self.n_tbins))
        if self.nu is None:
            self.nu = np.zeros((self.n_cells, self.n_tbins))

    @property
    def dt_bin(self) -> float:
        return self.t_final / self.n_tbins

    def tbin_of(self, t: float) -> int:
        return min(int(t / self.dt_bin), self.n_tbins - 1)

    def component(self, name: str) -> np.ndarray:
        if name == "m":
            return self.m
        if name == "lam":
            return self.lam
        if name == "q":
            return self.m + self.lam
        if name == "nu":
            return self.nu
        raise ValueError(f"unknown measure component {name!r}")

    def total(self, name: str) -> float:
        return float(np.sum(self.component(name)))

    def merge(self, other: "LevelMeasure") -> "LevelMeasure":
        if (other.level != self.level or other.n_cells != self.n_cells
                or other.n_tbins != self.n_tbins):
            raise ValueError("cannot merge accumulators with different layouts")
        return LevelMeasure(self.level, self.n_cells, self.h, self.t_final,
                            self.n_tbins, self.m + other.m,
                            self.lam + other.lam, self.nu + other.nu,
                            self.overflow_count + other.overflow_count)


def deposit_step_measures(acc: LevelMeasure, u_before, u_after, r, psi, cs,
                          alpha: float, eps: float, dt: float, t: float,
                          upper: bool = True) -> None:
    """Reference (pure-python) deposit for one step; the stepping kernels
    perform the same arithmetic inline."""
    n = acc.n_cells
    h = acc.h
    lg = acc.level
    dxi = lg.dxi
    tb = acc.tbin_of(t)
    grad = (np.roll(u_before, -1) - np.roll(u_before, 1)) / (2.0 * h)
    mval = (cs.phi_prime_clamped(u_before) + alpha) * grad * grad * h * dt
    for i in range(n):
        b = lg.bin_of(u_before[i])
        if b == lg.nbins and mval[i] > 0.0:
            acc.overflow_count += 1
        acc.m[i, b, tb] += mval[i]
    acc.nu[:, tb] += h * r
    e = np.maximum(u_after - psi, 0.0) if upper else np.maximum(psi - u_after, 0.0)
    for i in np.nonzero(e > 0.0)[0]:
        lo, hi = (psi[i], u_after[i]) if upper else (max(u_after[i], 0.0), psi[i])
        dens = e[i] / eps * h * dt
        if hi > lg.xi_max:
            acc.lam[i, lg.nbins, tb] += dens * (hi - lg.xi_max)
            acc.overflow_count += 1
            hi = lg.xi_max
        j = max(int(lo / dxi), 0)
        while j < lg.nbins and j * dxi < hi:
            seg = min(hi, (j + 1) * dxi) - max(lo, j * dxi)
            if seg > 0.0:
                acc.lam[i, j, tb] += dens * seg
            j += 1


def measure_window_mass(acc: LevelMeasure, component: str, xi_interval=None,
                        t_interval=None) -> float:
    """Mass of a component in a (level x time) window, partial bins weighted
    by overlap fraction.  nu has no level axis."""
    if component == "nu":
        if xi_interval is not None:
            raise ValueError("nu has no level axis; xi window not addressable")
        w = _interval_weights(np.linspace(0.0, acc.t_final, acc.n_tbins + 1),
                              t_interval)
        return float(np.sum(acc.nu @ w))
    arr = acc.component(component)
    wt = _interval_weights(np.linspace(0.0, acc.t_final, acc.n_tbins + 1),
                           t_interval)
    edges = np.append(acc.level.edges, np.inf)
    wx = _interval_weights(edges, xi_interval)
    return float(np.einsum("cbt,b,t->", arr, wx, wt))


def _interval_weights(edges: np.ndarray, interval) -> np.ndarray:
    nb = len(edges) - 1
    if interval is None:
        return np.ones(nb)
    lo, hi = interval
    w = np.empty(nb)
    for j in range(nb):
        a, b = edges[j], edges[j + 1]
        if not np.isfinite(b):
            # overflow slot counts fully iff the window reaches past the grid
            w[j] = 1.0 if hi > a else 0.0
            continue
        ov = min(hi, b) - max(lo, a)
        w[j] = max(ov, 0.0) / (b - a) if b > a else 0.0
    return np.clip(w, 0.0, 1.0)


def pair_level_measure(acc: LevelMeasure, component: str, fn) -> float:
    """Integrate fn(x, xi, t) against a level measure component (bin centers)."""
    arr = acc.component(component)
    x = (np.arange(acc.n_cells) + 0.5) * acc.h
    xi = acc.level.centers
    tc = (np.arange(acc.n_tbins) + 0.5) * acc.dt_bin
    vals = fn(x[:, None, None], xi[None, :, None], tc[None, None, :])
    return float(np.sum(arr[:, :-1, :] * vals))


def pair_reflection(acc: LevelMeasure, fn) -> float:
    """Integrate fn(x, t) against nu (bin centers)."""
    x = (np.arange(acc.n_cells) + 0.5) * acc.h
    tc = (np.arange(acc.n_tbins) + 0.5) * acc.dt_bin
    return float(np.sum(acc.nu * fn(x[:, None], tc[None, :])))


# ---------------------------------------------------------------------------
# Test-function library for the weak kinetic formulation


@dataclass(frozen=True)
class KineticTestFunction:
    """phi(x, xi, t) = rho(x) * eta(xi) * a(t) with eta a smooth bump
    supported in (xi_lo, xi_hi) subset (0, inf) and a(T) = 0."""

    rho_kind: str          # "one" | "cos" | "sin"
    xi_lo: float
    xi_hi: float
    t_final: float
    table_size: int = 8193
    _eta_grid: np.ndarray = field(default=None, repr=False, compare=False)
    _G_grid: np.ndarray = field(default=None, repr=False, compare=False)
    _xi_grid: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (0.0 < self.xi_lo < self.xi_hi):
            raise ValueError("bump support must satisfy 0 < xi_lo < xi_hi")
        xi = np.linspace(0.0, 2.0 * self.xi_hi, self.table_size)
        eta = self._eta_exact(xi)
        G = np.concatenate([[0.0], np.cumsum(0.5 * (eta[1:] + eta[:-1])
                                             * np.diff(xi))])
        object.__setattr__(self, "_xi_grid", xi)
        object.__setattr__(self, "_eta_grid", eta)
        object.__setattr__(self, "_G_grid", G)

    @property
    def label(self) -> str:
        return f"{self.rho_kind}-bump[{self.xi_lo:g},{self.xi_hi:g}]"

    def _eta_exact(self, xi):
        z = (2.0 * np.asarray(xi, dtype=float) - self.xi_lo - self.xi_hi) \
            / (self.xi_hi - self.xi_lo)
        out = np.zeros_like(z)
        inside = np.abs(z) < 1.0
        zi = z[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - zi * zi))
        return out

    def eta(self, xi):
        return self._eta_exact(xi)

    def eta_prime(self, xi):
        z = (2.0 * np.asarray(xi, dtype=float) - self.xi_lo - self.xi_hi) \
            / (self.xi_hi - self.xi_lo)
        out = np.zeros_like(z)
        inside = np.abs(z) < 1.0
        zi = z[inside]
        core = np.exp(1.0 - 1.0 / (1.0 - zi * zi))
        out[inside] = core * (-2.0 * zi / (1.0 - zi * zi) ** 2) \
            * (2.0 / (self.xi_hi - self.xi_lo))
        return out

    def eta_antideriv(self, u):
        """G(u) = int_0^u eta; tabulated trapezoid, fine enough for the
        refinement tolerances used downstream."""
        return np.interp(np.maximum(u, 0.0), self._xi_grid, self._G_grid,
                         right=float(self._G_grid[-1]))

    def rho(self, x):
        if self.rho_kind == "one":
            return np.ones_like(np.asarray(x, dtype=float))
        if self.rho_kind == "cos":
            return np.cos(TWO_PI * np.asarray(x, dtype=float))
        return np.sin(TWO_PI * np.asarray(x, dtype=float))

    def rho_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.rho_kind == "one":
            return np.zeros_like(x)
        if self.rho_kind == "cos":
            return -TWO_PI * np.sin(TWO_PI * x)
        return TWO_PI * np.cos(TWO_PI * x)

    def a(self, t):
        return 1.0 - np.asarray(t, dtype=float) / self.t_final

    def a_prime(self, t):
        return -1.0 / self.t_final * np.ones_like(np.asarray(t, dtype=float))


def default_test_functions(t_final: float, xi_lo: float, xi_hi: float):
    return [KineticTestFunction("one", xi_lo, xi_hi, t_final),
            KineticTestFunction("cos", xi_lo, xi_hi, t_final),
            KineticTestFunction("sin", xi_lo, xi_hi, t_final)]


@dataclass
class ResidualReport:
    phi_label: str
    terms: dict
    residual: float

    @property
    def term_sum_check(self) -> float:
        """Residual minus the signed recombination of its own terms (bookkeeping)."""
        rhs = sum(v for k, v in self.terms.items() if k != "time")
        return self.residual - (self.terms["time"] - rhs)


class KineticResidualAssembler:
    """Accumulates every term of the weak kinetic identity from per-chunk
    trajectory data; attach as a probe to run_trajectory."""

    def __init__(self, phis, mesh: Mesh, cs, ff, modes, eps, alpha, upper=True):
        self.phis = phis
        self.mesh = mesh
        self.cs = cs
        self.ff = ff
        self.modes = modes
        self.eps = eps
        self.alpha = alpha
        self.upper = upper
        self.F2_cells = 0.5 * (ff.F2_faces + np.roll(ff.F2_faces, -1))
        self.x = mesh.cell_centers
        self.sums = {p.label: dict(time=0.0, initial=0.0, diffusion=0.0,
                                   noise_corr=0.0, measure=0.0, transport=0.0,
                                   xi_corr=0.0, obstacle=0.0, martingale=0.0)
                     for p in phis}

    def start(self, u0: np.ndarray) -> None:
        for p in self.phis:
            self.sums[p.label]["initial"] = float(
                self.mesh.h * np.sum(p.eta_antideriv(u0) * p.rho(self.x))
                * p.a(0.0))

    def consume(self, t0, dt, u_before, v_after, psi_next, dB) -> None:
        h = self.mesh.h
        cs = self.cs
        S = u_before.shape[0]
        t = t0 + dt * np.arange(S)
        U = u_before
        V = v_after
        gradc = (np.roll(U, -1, axis=1) - np.roll(U, 1, axis=1)) / (2.0 * h)
        uf = 0.5 * (U + np.roll(U, 1, axis=1))
        phip = cs.phi_prime_clamped(U)
        snU = cs.sigma_n(U)
        snpU = cs.sigma_n_prime(U)
        e = np.maximum(V - psi_next, 0.0) if self.upper \
            else np.maximum(psi_next - V, 0.0)

        # transport divergence at cells from face-averaged g
        gf = cs.g(uf)
        divg = (np.roll(gf, -1, axis=1) - gf) / h

        # martingale: -div(sigma_n(u) f_k dB_k), faces -> cells
        nf = cs.sigma_n(uf) * (dB @ self.modes.f_faces) if self.modes.K \
            else np.zeros_like(U)
        nd = -(np.roll(nf, -1, axis=1) - nf) / h

        for p in self.phis:
            rho = p.rho(self.x)[None, :]
            rhog = p.rho_grad(self.x)[None, :]
            a_t = p.a(t)[:, None]
            da = (p.a(t + dt) - p.a(t))[:, None]
            etaU = p.eta(U)
            etapU = p.eta_prime(U)
            s = self.sums[p.label]
            s["time"] += float(-h * np.sum(p.eta_antideriv(U) * rho * da))
            s["diffusion"] += float(-dt * h * np.sum(
                (phip + self.alpha) * gradc * rhog * etaU * a_t))
            s["noise_corr"] += float(-0.5 * dt * h * np.sum(
                (self.ff.F1_cells[None, :] * snpU ** 2 * gradc
                 + snU * snpU * self.F2_cells[None, :]) * rhog * etaU * a_t))
            s["measure"] += float(-dt * h * np.sum(
                (phip + self.alpha) * gradc * gradc * etapU * rho * a_t))
            s["transport"] += float(-dt * h * np.sum(etaU * rho * a_t * divg))
            s["xi_corr"] += float(0.5 * dt * h * np.sum(
                (snU * snpU * gradc * self.F2_cells[None, :]
                 + snU ** 2 * self.ff.F3_cells[None, :]) * etapU * rho * a_t))
            s["obstacle"] += float(-dt * h * np.sum(
                p.eta(V) * rho * a_t * e / self.eps))
            s["martingale"] += float(h * np.sum(etaU * rho * a_t * nd))

    def finish(self):
        reports = []
        for p in self.phis:
            s = self.sums[p.label]
            rhs = sum(v for k, v in s.items() if k != "time")
            reports.append(ResidualReport(p.label, dict(s), s["time"] - rhs))
        return reports


class DefectAssembler:
    """Left-hand side of the level-by-level reflection identity:
    sum over steps of h dt (phi(x, u) - phi(x, psi)) * e / eps."""

    def __init__(self, phis, mesh: Mesh, eps, upper=True):
        # phis: list of (label, phi(x, xi), dphi_dxi(x, xi))
        self.phis = phis
        self.mesh = mesh
        self.eps = eps
        self.upper = upper
        self.lhs = {label: 0.0 for label, _, _ in phis}

    def start(self, u0):
        pass

    def consume(self, t0, dt, u_before, v_after, psi_next, dB) -> None:
        h = self.mesh.h
        x = self.mesh.cell_centers[None, :]
        e = np.maximum(v_after - psi_next, 0.0) if self.upper \
            else np.maximum(psi_next - v_after, 0.0)
        dens = e / self.eps
        for label, phi, _ in self.phis:
            self.lhs[label] += float(h * dt * np.sum(
                (phi(x, v_after) - phi(x, psi_next)) * dens))

    def finish(self):
        return dict(self.lhs)

    def rhs_from_measure(self, acc: LevelMeasure):
        """Pair d_xi phi with the accumulated lam (bin centers)."""
        out = {}
        for label, _, dphi in self.phis:
            out[label] = pair_level_measure(
                acc, "lam", lambda x, xi, t, d=dphi: d(x, xi))
        return out


def defect_identity(acc: LevelMeasure, assembler: DefectAssembler):
    """Return (lhs, rhs) per test function after a run."""
    lhs = assembler.finish()
    rhs = assembler.rhs_from_measure(acc)
    return lhs, rhs
