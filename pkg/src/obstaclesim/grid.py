"""1-D periodic finite-volume mesh and exactly conservative discrete operators.

Cells are indexed 0..n-1 with centers x_i = (i + 1/2) h, h = 1/n.  Face j sits
at x = j h, between cells j-1 and j (periodic wrap at j = 0).  Every transport
term in the solver is assembled as a face flux, so discrete conservation is
structural: summing a divergence telescopes to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Mesh:
    n: int
    h: float = field(init=False)

    def __post_init__(self):
        if self.n < 8:
            raise ValueError(f"mesh needs at least 8 cells, got n={self.n}")
        object.__setattr__(self, "h", 1.0 / self.n)

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    @property
    def face_positions(self) -> np.ndarray:
        return np.arange(self.n) * self.h


def face_gradient(mesh: Mesh, f: np.ndarray) -> np.ndarray:
    """Gradient at faces: g_j = (f_j - f_{j-1}) / h, periodic."""
    return (f - np.roll(f, 1)) / mesh.h


def divergence(mesh: Mesh, flux: np.ndarray) -> np.ndarray:
    """Divergence at cells: d_i = (F_{i+1} - F_i) / h, periodic.

    Adjoint (up to sign) of face_gradient; h * sum(divergence(F)) == 0 for
    any face field F.
    """
    return (np.roll(flux, -1) - flux) / mesh.h


def integrate(mesh: Mesh, f: np.ndarray, p=1):
    """Discrete L^p norm over the unit torus; p='sum' gives the signed integral."""
    if p == "sum":
        return mesh.h * float(np.sum(f))
    if p == 1:
        return mesh.h * float(np.sum(np.abs(f)))
    if p == 2:
        return float(np.sqrt(mesh.h * np.sum(f * f)))
    if p in (np.inf, "inf"):
        return float(np.max(np.abs(f)))
    raise ValueError(f"unsupported norm exponent {p!r}")


@dataclass(frozen=True)
class LevelGrid:
    """Uniform bins for the level (kinetic) variable on [0, xi_max].

    Bin j covers [j*dxi, (j+1)*dxi); an extra overflow slot (index nbins)
    catches mass above xi_max so nothing is silently dropped.
    """

    xi_max: float
    nbins: int

    def __post_init__(self):
        if self.nbins < 32:
            raise ValueError(f"need at least 32 level bins, got {self.nbins}")
        if self.xi_max <= 0:
            raise ValueError("xi_max must be positive")

    @property
    def dxi(self) -> float:
        return self.xi_max / self.nbins

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, self.xi_max, self.nbins + 1)

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.nbins) + 0.5) * self.dxi

    def bin_of(self, xi: float) -> int:
        """Index of the bin containing xi; nbins for overflow, 0 floor below."""
        if xi >= self.xi_max:
            return self.nbins
        j = int(xi / self.dxi)
        return min(max(j, 0), self.nbins - 1)


def default_level_grid(psi_bound: float, u_init_max: float, nbins: int = 64,
                       xi_max: float | None = None) -> LevelGrid:
    if xi_max is None:
        xi_max = 1.2 * max(psi_bound, u_init_max, 1e-12)
    target = 1.2 * max(psi_bound, u_init_max)
    if xi_max < target - 1e-12:
        raise ValueError(
            f"xi_max={xi_max} too small; needs >= 1.2*max(obstacle bound, max u_init)={target}")
    return LevelGrid(xi_max=xi_max, nbins=nbins)
