"""Truncated conservative trigonometric noise and its structure fields.

The driving noise is sum_k f_k(x) B_t^k with f_k a trig mode a*cos(2 pi k x)
or a*sin(2 pi k x).  Derived fields:

    F1 = sum f_k^2,   F2 = (1/2) sum grad(f_k^2),   F3 = sum |grad f_k|^2.

Gradients of individual modes are evaluated analytically (never differenced),
so mode-resolution error does not contaminate F3 or the noise flux.  F2 at
faces uses the discrete product rule avg(f)*facegrad(f), which makes
div F2 == (1/2) * discrete Laplacian of F1 hold to machine precision,
mirroring the continuum identity div F2 = (1/2) Delta F1.

Brownian increments come from a counter-based generator (Philox): the draw
for (master_seed, path_id, step) is a pure function of that tuple, so coupled
experiments (same seed, different epsilon or initial data) share noise paths
by construction, independent of evaluation order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Mesh, divergence, face_gradient

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ModeSpec:
    amplitude: float
    wavenumber: int
    phase: str  # "cosine" | "sine"

    def __post_init__(self):
        if not np.isfinite(self.amplitude):
            raise ValueError("mode amplitude must be finite")
        if self.wavenumber < 0:
            raise ValueError("wavenumber must be nonnegative")
        if self.phase not in ("cosine", "sine"):
            raise ValueError(f"unknown phase {self.phase!r}")

    def eval(self, x: np.ndarray) -> np.ndarray:
        w = TWO_PI * self.wavenumber
        if self.phase == "cosine":
            return self.amplitude * np.cos(w * x)
        return self.amplitude * np.sin(w * x)

    def eval_grad(self, x: np.ndarray) -> np.ndarray:
        w = TWO_PI * self.wavenumber
        if self.phase == "cosine":
            return -self.amplitude * w * np.sin(w * x)
        return self.amplitude * w * np.cos(w * x)


@dataclass(frozen=True)
class ModeSet:
    specs: tuple
    f_cells: np.ndarray      # (K, n) mode values at cell centers
    f_faces: np.ndarray      # (K, n) mode values at faces
    grad_faces: np.ndarray   # (K, n) analytic mode gradients at faces
    grad_cells: np.ndarray   # (K, n) analytic mode gradients at cell centers
    homogeneous: bool

    @property
    def K(self) -> int:
        return len(self.specs)


@dataclass(frozen=True)
class FFields:
    F1_cells: np.ndarray
    F1_faces: np.ndarray
    F2_faces: np.ndarray
    F3_cells: np.ndarray
    divF2_cells: np.ndarray


def build_mode_set(specs, mesh: Mesh) -> ModeSet:
    """Sample modes at cells/faces; reject wavenumbers above n/4."""
    specs = tuple(specs)
    for idx, s in enumerate(specs):
        if s.wavenumber > mesh.n // 4:
            raise ValueError(
                f"mode {idx}: wavenumber {s.wavenumber} unresolvable on n={mesh.n} "
                f"(limit n/4 = {mesh.n // 4})")
    xc = mesh.cell_centers
    xf = mesh.face_positions
    K = len(specs)
    f_cells = np.empty((K, mesh.n))
    f_faces = np.empty((K, mesh.n))
    g_faces = np.empty((K, mesh.n))
    g_cells = np.empty((K, mesh.n))
    for k, s in enumerate(specs):
        f_cells[k] = s.eval(xc)
        f_faces[k] = s.eval(xf)
        g_faces[k] = s.eval_grad(xf)
        g_cells[k] = s.eval_grad(xc)
    homogeneous = _is_homogeneous(specs)
    return ModeSet(specs, f_cells, f_faces, g_faces, g_cells, homogeneous)


def _is_homogeneous(specs) -> bool:
    """True when every mode comes in a sin/cos pair of equal amplitude and
    wavenumber (then F2 vanishes and F1, F3 are constant)."""
    if not specs:
        return True
    pairs = {}
    for s in specs:
        if s.wavenumber == 0:
            return False
        key = (s.wavenumber, round(s.amplitude, 15))
        pairs.setdefault(key, set()).add(s.phase)
    return all(ph == {"cosine", "sine"} for ph in pairs.values())


def compute_f_fields(modes: ModeSet, mesh: Mesh) -> FFields:
    F1_cells = np.sum(modes.f_cells ** 2, axis=0) if modes.K else np.zeros(mesh.n)
    F1_faces = np.sum(modes.f_faces ** 2, axis=0) if modes.K else np.zeros(mesh.n)
    F3_cells = np.sum(modes.grad_cells ** 2, axis=0) if modes.K else np.zeros(mesh.n)
    # Discrete product rule: avg(f) * facegrad(f) == (1/2) facegrad(f^2)
    # exactly, so divF2 equals half the discrete Laplacian of F1.
    F2_faces = np.zeros(mesh.n)
    for k in range(modes.K):
        fc = modes.f_cells[k]
        avg = 0.5 * (fc + np.roll(fc, 1))
        F2_faces += avg * face_gradient(mesh, fc)
    divF2_cells = divergence(mesh, F2_faces)
    return FFields(F1_cells, F1_faces, F2_faces, F3_cells, divF2_cells)


def default_mode_specs(K: int, amplitude: float, decay: float) -> list:
    """One homogeneous sin/cos pair per wavenumber 1..K/2; a_k = a0 * k^-decay."""
    if K % 2 != 0:
        raise ValueError("default homogeneous preset needs an even mode count")
    specs = []
    for k in range(1, K // 2 + 1):
        a = amplitude * k ** (-decay)
        specs.append(ModeSpec(a, k, "cosine"))
        specs.append(ModeSpec(a, k, "sine"))
    return specs


def single_mode_specs(K: int, amplitude: float, decay: float) -> list:
    """Unpaired cosine modes, wavenumbers 1..K (F2 generally nonzero)."""
    return [ModeSpec(amplitude * k ** (-decay), k, "cosine") for k in range(1, K + 1)]


@dataclass(frozen=True)
class RngKey:
    master_seed: int
    path_id: int = 0

    def with_path(self, path_id: int) -> "RngKey":
        return RngKey(self.master_seed, path_id)


# Counter-based generator: Philox4x64-10 evaluated directly over uint64
# arrays, with one counter block per (step, mode) draw.  The draw for
# (master_seed, path_id, step, mode) is a pure function of that tuple, so any
# chunking, evaluation order, or thread schedule reproduces the same path.

_PHILOX_M0 = np.uint64(0xD2E7470EE14C6C93)
_PHILOX_M1 = np.uint64(0xCA5A826395121157)
_PHILOX_W0 = np.uint64(0x9E3779B97F4A7C15)
_PHILOX_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_U64 = np.uint64


def _mulhilo(a, b):
    """Full 64x64 -> 128 bit product as (hi, lo), elementwise on uint64."""
    lo = a * b  # wraps mod 2^64
    ah = a >> _U64(32)
    al = a & _MASK32
    bh = b >> _U64(32)
    bl = b & _MASK32
    t = ah * bl + ((al * bl) >> _U64(32))
    hi = ah * bh + (t >> _U64(32)) + ((al * bh + (t & _MASK32)) >> _U64(32))
    return hi, lo


def _philox4x64(c0, c1, c2, c3, k0, k1):
    """Ten Philox rounds; counters and keys are equal-shaped uint64 arrays."""
    with np.errstate(over="ignore"):
        for _ in range(10):
            hi0, lo0 = _mulhilo(_PHILOX_M0, c0)
            hi1, lo1 = _mulhilo(_PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
            k0 = k0 + _PHILOX_W0
            k1 = k1 + _PHILOX_W1
    return c0, c1, c2, c3


_INV53 = 1.0 / 9007199254740992.0  # 2^-53


def sample_increment_block(key: RngKey, step0: int, nsteps: int, K: int,
                           dt: float) -> np.ndarray:
    """N(0, dt) increments for steps step0..step0+nsteps-1, shape (nsteps, K).

    Row s is identical to sample_increments(key, step0+s, K, dt) regardless
    of chunking.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if K == 0 or nsteps == 0:
        return np.zeros((nsteps, K))
    steps = np.arange(step0, step0 + nsteps, dtype=np.uint64)[:, None]
    ks = np.arange(K, dtype=np.uint64)[None, :]
    shape = (nsteps, K)
    c0 = np.broadcast_to(ks, shape).astype(np.uint64)
    c1 = np.zeros(shape, dtype=np.uint64)
    c2 = np.broadcast_to(steps, shape).astype(np.uint64)
    c3 = np.zeros(shape, dtype=np.uint64)
    k0 = np.full(shape, _U64(np.uint64(key.master_seed)), dtype=np.uint64)
    k1 = np.full(shape, _U64(np.uint64(key.path_id)), dtype=np.uint64)
    x0, x1, _, _ = _philox4x64(c0, c1, c2, c3, k0, k1)
    # Box-Muller from two 53-bit uniforms; u1 offset keeps log finite
    u1 = ((x0 >> _U64(11)).astype(np.float64) + 1.0) * _INV53
    u2 = (x1 >> _U64(11)).astype(np.float64) * _INV53
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
    return z * np.sqrt(dt)


def sample_increments(key: RngKey, step: int, K: int, dt: float) -> np.ndarray:
    """K independent N(0, dt) draws, a pure function of (key, step)."""
    return sample_increment_block(key, step, 1, K, dt)[0]
