"""Nonlinearities, obstacle, and the structural-assumption auditor.

The shipped coefficient family is the power preset: diffusion Phi(u) = u^m,
noise coefficient sigma a power of u (sqrt(Phi) by default), transport g zero,
linear, or proportional to Phi.  sigma is regularized through the C^1 ramp

    p_delta(u) = 0           (u <= 0)
               = u^2/(2 d)   (0 < u < d)
               = u - d/2     (u >= d)

so sigma_n := sigma o p_delta vanishes identically on (-inf, 0] (needed for
non-negativity of the scheme) and agrees with sigma up to the d/2 shift away
from the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Mesh

TWO_PI = 2.0 * math.pi

SIGMA_KINDS = ("sqrt_phi", "linear", "custom_power", "zero")
G_KINDS = ("zero", "linear_transport", "phi_transport")


@dataclass(frozen=True)
class CoefficientSet:
    """Power-law coefficient closures.

    Phi(u) = u^m; sigma(u) = s_sig * u^q_sig; g(u) = s_g * u^q_g.
    All evaluators treat negative arguments as 0 (the state is nonnegative up
    to solver tolerance).
    """

    m: float
    sigma_kind: str
    g_kind: str
    delta_reg: float
    s_sig: float = 1.0
    q_sig: float = field(default=0.5)
    s_g: float = 0.0
    q_g: float = 1.0
    p: float = 2.0

    # -- diffusion -----------------------------------------------------------
    def phi(self, r):
        return np.maximum(r, 0.0) ** self.m

    def phi_prime(self, r):
        rp = np.maximum(r, 0.0)
        if self.m < 1.0:
            # would blow up at 0; callers that need the raw value below
            # delta_reg must not exist (see phi_prime_clamped)
            rp = np.maximum(rp, self.delta_reg)
        return self.m * rp ** (self.m - 1.0)

    def phi_prime_clamped(self, r):
        """Phi' with the fast-diffusion clamp at delta_reg; used wherever
        Phi' multiplies |grad u|^2 (drift correction, measure deposit, CFL),
        never in the diffusion flux itself."""
        return self.phi_prime(r)

    def bracket_sqrt_phi_prime(self, r):
        """Antiderivative of sqrt(Phi') from 0: (2 sqrt(m)/(m+1)) r^((m+1)/2)."""
        rp = np.maximum(r, 0.0)
        return (2.0 * math.sqrt(self.m) / (self.m + 1.0)) * rp ** ((self.m + 1.0) / 2.0)

    def bracket_weighted(self, r, p=None):
        """Antiderivative of |.|^((p-2)/2) sqrt(Phi') from 0 (closed form)."""
        if p is None:
            p = self.p
        rp = np.maximum(r, 0.0)
        e = (self.m + p) / 2.0
        return (math.sqrt(self.m) / e) * rp ** e

    # -- regularization ramp -------------------------------------------------
    def ramp(self, r):
        d = self.delta_reg
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0.0, 0.0,
                        np.where(r < d, r * r / (2.0 * d), r - 0.5 * d))

    def ramp_prime(self, r):
        d = self.delta_reg
        r = np.asarray(r, dtype=float)
        return np.where(r <= 0.0, 0.0, np.where(r < d, r / d, 1.0))

    # -- sigma ---------------------------------------------------------------
    def sigma(self, r):
        rp = np.maximum(r, 0.0)
        return self.s_sig * rp ** self.q_sig

    def sigma_prime(self, r):
        rp = np.asarray(np.maximum(r, 0.0), dtype=float)
        with np.errstate(divide="ignore"):
            out = self.s_sig * self.q_sig * rp ** (self.q_sig - 1.0)
        return np.where(rp > 0.0, out, 0.0)

    def sigma_n(self, r):
        return self.sigma(self.ramp(r))

    def sigma_n_prime(self, r):
        return self.sigma_prime(self.ramp(r)) * self.ramp_prime(r)

    def g(self, r):
        if self.s_g == 0.0:
            return np.zeros_like(np.asarray(r, dtype=float))
        return self.s_g * np.maximum(r, 0.0) ** self.q_g

    def g_prime(self, r):
        if self.s_g == 0.0:
            return np.zeros_like(np.asarray(r, dtype=float))
        rp = np.asarray(np.maximum(r, 0.0), dtype=float)
        with np.errstate(divide="ignore"):
            out = self.s_g * self.q_g * rp ** (self.q_g - 1.0)
        return np.where(rp > 0.0, out, 0.0)


def make_coefficients(m: float, sigma_kind: str = "sqrt_phi",
                      g_kind: str = "zero", delta_reg: float = 1e-3,
                      sigma_scale: float = 1.0, sigma_power: float | None = None,
                      g_coeff: float = 0.0, p: float = 2.0) -> CoefficientSet:
    if m <= 0:
        raise ValueError(f"diffusion exponent must be positive, got m={m}")
    if not (0 < delta_reg < 1):
        raise ValueError(f"delta_reg must lie in (0, 1), got {delta_reg}")
    if sigma_kind not in SIGMA_KINDS:
        raise ValueError(f"unknown sigma_kind {sigma_kind!r}")
    if g_kind not in G_KINDS:
        raise ValueError(f"unknown g_kind {g_kind!r}")
    if sigma_kind == "sqrt_phi":
        s_sig, q_sig = sigma_scale, m / 2.0
    elif sigma_kind == "linear":
        s_sig, q_sig = sigma_scale, 1.0
    elif sigma_kind == "zero":
        s_sig, q_sig = 0.0, 1.0
    else:
        if sigma_power is None or sigma_power <= 0:
            raise ValueError("custom_power sigma needs a positive sigma_power")
        s_sig, q_sig = sigma_scale, sigma_power
    if g_kind == "zero":
        s_g, q_g = 0.0, 1.0
    elif g_kind == "linear_transport":
        s_g, q_g = g_coeff, 1.0
    else:
        s_g, q_g = g_coeff, m
    return CoefficientSet(m=m, sigma_kind=sigma_kind, g_kind=g_kind,
                          delta_reg=delta_reg, s_sig=s_sig, q_sig=q_sig,
                          s_g=s_g, q_g=q_g, p=p)


_WHICH = {"phi", "phi_prime", "sigma_n", "sigma_n_prime", "g", "g_prime",
          "bracket_sqrt_phi_prime"}


def eval_coefficient(cs: CoefficientSet, which: str, r: float) -> float:
    if which not in _WHICH:
        raise ValueError(f"unknown coefficient {which!r}")
    if np.isnan(r):
        raise ValueError("coefficient evaluation at NaN")
    return float(getattr(cs, which)(r))


# ---------------------------------------------------------------------------
# Obstacle

OBSTACLE_KINDS = ("constant", "trig_in_x", "moving_bump", "time_ramp")


@dataclass(frozen=True)
class ObstacleSpec:
    kind: str
    base: float
    amplitude: float = 0.0
    wavenumber: int = 1
    speed: float = 0.0
    rate: float = 0.0
    side: str = "upper"
    T: float = 1.0

    def __post_init__(self):
        if self.kind not in OBSTACLE_KINDS:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if self.side not in ("upper", "lower"):
            raise ValueError(f"obstacle side must be upper or lower, got {self.side!r}")
        if self.min_value() < 0.0:
            raise ValueError(
                f"obstacle must be nonnegative on [0, T]; minimum is {self.min_value()}")

    def min_value(self) -> float:
        if self.kind == "constant":
            return self.base
        if self.kind == "trig_in_x":
            return self.base - abs(self.amplitude)
        if self.kind == "moving_bump":
            return self.base  # bump term is amplitude*(1+cos)/2 >= 0
        lo = min(self.base, self.base + self.rate * self.T)
        return lo

    @property
    def bound(self) -> float:
        """Certified upper bound M of psi over [0, T] x torus."""
        if self.kind == "constant":
            return self.base
        if self.kind == "trig_in_x":
            return self.base + abs(self.amplitude)
        if self.kind == "moving_bump":
            return self.base + abs(self.amplitude)
        return max(self.base, self.base + self.rate * self.T)

    def eval(self, x: np.ndarray, t: float) -> np.ndarray:
        if self.kind == "constant":
            return np.full_like(x, self.base)
        if self.kind == "trig_in_x":
            return self.base + self.amplitude * np.sin(TWO_PI * self.wavenumber * x)
        if self.kind == "moving_bump":
            return self.base + 0.5 * self.amplitude * (
                1.0 + np.cos(TWO_PI * self.wavenumber * (x - self.speed * t)))
        return np.full_like(x, self.base + self.rate * t)


def eval_obstacle(spec: ObstacleSpec, mesh: Mesh, t: float) -> np.ndarray:
    psi = spec.eval(mesh.cell_centers, t)
    if np.any(psi < 0.0):
        raise ValueError("obstacle evaluated negative; invalid parameters")
    return psi


# ---------------------------------------------------------------------------
# Assumption audit


@dataclass
class AuditItem:
    assumption_id: str
    status: str            # "pass" | "fail" | "report"
    fitted_constant: float
    worst_point: float
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status != "fail"


@dataclass
class AuditReport:
    items: list

    @property
    def all_pass(self) -> bool:
        return all(it.passed for it in self.items)

    def by_id(self, assumption_id: str) -> AuditItem:
        for it in self.items:
            if it.assumption_id == assumption_id:
                return it
        raise KeyError(assumption_id)

    def as_dict(self):
        return {"all_pass": self.all_pass,
                "items": [vars(it) for it in self.items]}


def _fit_ratio(num, den, xs):
    ratio = num / den
    i = int(np.argmax(ratio))
    return float(ratio[i]), float(xs[i]), ratio


def _diverging(ratio) -> bool:
    """Flag a ratio that keeps growing through the top decade of the sample."""
    k = max(len(ratio) // 10, 4)
    tail = ratio[-k:]
    return bool(tail[-1] > 2.0 * tail[0] and np.all(np.diff(tail) > 0))


def audit_assumptions(cs: CoefficientSet, ffields, obstacle: ObstacleSpec,
                      xi_max: float, npoints: int = 2000) -> AuditReport:
    """Check the structural growth assumptions on a log-uniform sample grid.

    Constants are fitted (max observed ratio) and reported; an inequality
    fails only when its ratio diverges monotonically through the sampled
    range.  Behavior beyond xi_max is reported as unchecked.
    """
    if npoints < 1000:
        raise ValueError("sample grid needs at least 1000 points")
    # sample well beyond the simulated level range: the growth bounds are
    # asymptotic statements and saturating ratios only flatten above xi ~ 1
    xs = np.geomspace(cs.delta_reg, max(xi_max, 100.0), npoints)
    items = []

    # existence assumption, item 1: Phi(0)=sigma(0)=0, Phi' > 0
    ok = (cs.phi(0.0) == 0.0 and cs.sigma(0.0) == 0.0
          and np.all(cs.phi_prime(xs) > 0.0))
    items.append(AuditItem("growth-1", "pass" if ok else "fail", 0.0, 0.0,
                           "Phi(0)=sigma(0)=0 and Phi' positive on sample"))

    # item 2: Phi(xi) <= c (1 + xi^ceil(m))
    meff = max(cs.m, 1.0)
    c2, x2, r2 = _fit_ratio(cs.phi(xs), 1.0 + xs ** meff, xs)
    items.append(AuditItem("growth-2", "fail" if _diverging(r2) else "pass",
                           c2, x2, f"Phi <= c(1+xi^{meff:g})"))

    # item 3: |g| + Phi' <= c (1 + xi + bracket_p^2)
    den3 = 1.0 + xs + cs.bracket_weighted(xs) ** 2
    c3, x3, r3 = _fit_ratio(np.abs(cs.g(xs)) + cs.phi_prime(xs), den3, xs)
    items.append(AuditItem("growth-3", "fail" if _diverging(r3) else "pass",
                           c3, x3, "|g| + Phi' growth bound"))

    # item 5: sigma^2 <= c (1 + xi + bracket^2), plus p-weighted variant
    den5 = 1.0 + xs + cs.bracket_sqrt_phi_prime(xs) ** 2
    c5, x5, r5 = _fit_ratio(cs.sigma(xs) ** 2, den5, xs)
    items.append(AuditItem("growth-5", "fail" if _diverging(r5) else "pass",
                           c5, x5, "sigma^2 growth bound"))
    den5p = 1.0 + xs + cs.bracket_weighted(xs) ** 2
    c5p, x5p, r5p = _fit_ratio(xs ** (cs.p - 2.0) * cs.sigma(xs) ** 2, den5p, xs)
    items.append(AuditItem("growth-5p", "fail" if _diverging(r5p) else "pass",
                           c5p, x5p, f"p-weighted sigma^2 bound (p={cs.p:g}), report only"))

    # item 6: either div F2 == 0 or a bracket bound (reported)
    divmax = float(np.max(np.abs(ffields.divF2_cells))) if ffields is not None else 0.0
    if divmax <= 1e-12:
        items.append(AuditItem("growth-6", "pass", 0.0, 0.0,
                               "first branch: div F2 == 0"))
    else:
        items.append(AuditItem("growth-6", "report", divmax, 0.0,
                               "div F2 nonzero; second branch constant reported"))

    # item 8: limsup_{xi->0+} sigma^2(xi)/xi <= c, sampled on the lowest decade
    xs0 = np.geomspace(cs.delta_reg, 10.0 * cs.delta_reg, 200)
    c8 = float(np.max(cs.sigma(xs0) ** 2 / xs0))
    items.append(AuditItem("growth-8", "pass", c8, float(xs0[0]),
                           "sigma^2/xi bounded near 0 (fitted on lowest decade)"))

    # noise assumption (i): div F2 = (1/2) Laplacian F1 discretely, bounded
    if ffields is not None:
        items.append(AuditItem("noise-i", "pass" if np.isfinite(divmax) else "fail",
                               divmax, 0.0, "div F2 bounded"))

    # noise assumption (ii): psi continuous and nonnegative
    ok = obstacle.min_value() >= 0.0
    items.append(AuditItem("obstacle-ii", "pass" if ok else "fail",
                           obstacle.min_value(), 0.0, "psi >= 0 on [0, T]"))

    items.append(AuditItem("range", "report", float(xs[-1]), float(xs[-1]),
                           "growth bounds unchecked beyond sampled xi_max"))
    return AuditReport(items)
