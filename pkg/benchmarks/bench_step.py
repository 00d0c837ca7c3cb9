"""Benchmark the chunk stepping kernel: numba backend vs pure-numpy fallback.

Runs the same chunk of porous-medium steps through both implementations and
reports per-step cost.  Usage: python benchmarks/bench_step.py [nsteps]
"""

import sys
import time

import numpy as np

from obstaclesim import kernels_numba, kernels_numpy
from obstaclesim.config import preset_config
from obstaclesim.solver import build_noise, compute_stable_dt
from obstaclesim.noise import RngKey, sample_increment_block


def bench(kernel, cfg, nsteps, warmup=True):
    mesh = cfg.mesh()
    cs = cfg.coefficients()
    nz = build_noise(cfg, mesh)
    lg = cfg.level_grid(mesh)
    dt = compute_stable_dt(cfg, mesh, nz.ff)
    u = cfg.u_init(mesh).astype(float)
    u0 = u.copy()
    dB = sample_increment_block(RngKey(cfg.master_seed, 0), 0, nsteps,
                                nz.modes.K, dt)
    from obstaclesim.solver import _psi_block
    t = dt * np.arange(1, nsteps + 1)
    psi = _psi_block(cfg.obstacle(), mesh.cell_centers, t)
    tbin = np.zeros(nsteps, dtype=np.int64)
    m_acc = np.zeros((mesh.n, lg.nbins + 1, 1))
    l_acc = np.zeros_like(m_acc)
    nu_acc = np.zeros((mesh.n, 1))
    diag = np.zeros((nsteps, kernels_numpy.NDIAG))
    u_out = np.zeros((nsteps, mesh.n))

    def once():
        uu = u0.copy()
        m_acc[:] = 0.0
        l_acc[:] = 0.0
        nu_acc[:] = 0.0
        t0 = time.perf_counter()
        kernel.run_chunk(uu, dB, psi, tbin, nz.modes.f_faces,
                         nz.ff.F1_faces, nz.ff.F2_faces, nz.ff.F3_cells,
                         nz.ff.divF2_cells, mesh.h, dt, cfg.epsilon,
                         cfg.alpha, True, cs.m, cs.delta_reg, cs.s_sig,
                         cs.q_sig, cs.s_g, cs.q_g, lg.xi_max, lg.nbins,
                         m_acc, l_acc, nu_acc, diag, u_out, True, u0)
        return time.perf_counter() - t0, uu

    if warmup:
        once()
    el, uu = once()
    return el, uu


def main():
    nsteps = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
    cfg = preset_config("pm-contact")
    t_nb, u_nb = bench(kernels_numba, cfg, nsteps)
    t_np, u_np = bench(kernels_numpy, cfg, nsteps)
    drift = float(np.max(np.abs(u_nb - u_np)))
    print(f"chunk of {nsteps} steps, n={cfg.n} cells")
    print(f"  numba : {t_nb:7.3f} s  ({1e6 * t_nb / nsteps:6.2f} us/step)")
    print(f"  numpy : {t_np:7.3f} s  ({1e6 * t_np / nsteps:6.2f} us/step)")
    print(f"  speedup x{t_np / t_nb:.1f}, final-state backend drift {drift:.2e}")


if __name__ == "__main__":
    main()
