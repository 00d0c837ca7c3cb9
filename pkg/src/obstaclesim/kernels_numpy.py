"""Pure-numpy reference implementation of the time-stepping chunk kernel.

Selected when numba is unavailable or SIM_DISABLE_NUMBA is set.  The numba
implementation in kernels_numba.py follows the same arithmetic; the two are
cross-checked in tests to 1e-12.
"""

from __future__ import annotations

import numpy as np

NDIAG = 10
(D_MASS, D_L2SQ, D_MINU, D_REFL, D_DIST, D_EXC1, D_EXC2, D_EPSI,
 D_DISSIP, D_NCORR) = range(NDIAG)


def _pow(r, q):
    """r**q with fast paths matching the numba kernel's _pow_s exactly."""
    if q == 1.0:
        return r
    if q == 2.0:
        return r * r
    if q == 0.0:
        return np.ones_like(r)
    if q == 0.5:
        return np.sqrt(r)
    if q == 1.5:
        return r * np.sqrt(r)
    if q == -0.5:
        with np.errstate(divide="ignore"):
            return 1.0 / np.sqrt(r)
    if q == 3.0:
        return r * r * r
    if q == 0.25:
        return np.sqrt(np.sqrt(r))
    if q == -0.75:
        with np.errstate(divide="ignore"):
            s = np.sqrt(r)
            return 1.0 / (s * np.sqrt(s))
    return r ** q


def _phi(r, m):
    return np.where(r > 0.0, _pow(np.maximum(r, 0.0), m), 0.0)


def _phi_prime_cl(r, m, delta):
    rp = np.maximum(r, 0.0)
    if m < 1.0:
        rp = np.maximum(rp, delta)
    return m * _pow(rp, m - 1.0)


def _ramp(r, delta):
    return np.where(r <= 0.0, 0.0,
                    np.where(r < delta, r * r / (2.0 * delta), r - 0.5 * delta))


def _ramp_prime(r, delta):
    return np.where(r <= 0.0, 0.0, np.where(r < delta, r / delta, 1.0))


def _sigma_n(r, delta, s_sig, q_sig):
    if s_sig == 0.0:
        return np.zeros_like(r)
    return s_sig * _pow(_ramp(r, delta), q_sig)


def _sigma_n_prime(r, delta, s_sig, q_sig):
    if s_sig == 0.0:
        return np.zeros_like(r)
    p = _ramp(r, delta)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = s_sig * q_sig * _pow(p, q_sig - 1.0)
    return np.where(p > 0.0, d, 0.0) * _ramp_prime(r, delta)


def _g(r, s_g, q_g):
    if s_g == 0.0:
        return np.zeros_like(r)
    return s_g * np.where(r > 0.0, _pow(np.maximum(r, 0.0), q_g), 0.0)


def run_chunk(u, dB, psi_next, tbin, f_faces, F1_faces, F2_faces, F3_cells,
              divF2_cells, h, dt, eps, alpha, upper, m, delta, s_sig, q_sig,
              s_g, q_g, xi_max, nbins, m_acc, l_acc, nu_acc, diag, u_out,
              deposit, u_init):
    """Advance u in place through dB.shape[0] steps; fill diag and u_out.

    Returns the number of level-overflow deposits (mass above xi_max).
    """
    nsteps = dB.shape[0]
    n = u.shape[0]
    dxi = xi_max / nbins
    inv_dxi = 1.0 / dxi
    inv_h = 1.0 / h
    inv_eps = 1.0 / eps
    overflow = 0
    cells = np.arange(n)

    for s in range(nsteps):
        up = u
        um1 = np.roll(up, 1)
        uf = 0.5 * (up + um1)
        gradu = (up - um1) * inv_h
        sn = _sigma_n(uf, delta, s_sig, q_sig)
        snp = _sigma_n_prime(uf, delta, s_sig, q_sig)
        flux = ((_phi(up, m) - _phi(um1, m)) * inv_h
                + alpha * gradu
                + 0.5 * (F1_faces * snp * snp * gradu + sn * snp * F2_faces)
                - _g(uf, s_g, q_g))
        nflux = sn * (f_faces.T @ dB[s])
        ustar = up + dt * (np.roll(flux, -1) - flux) * inv_h \
            - (np.roll(nflux, -1) - nflux) * inv_h

        psi = psi_next[s]
        lam = dt / eps
        inv_1lam = 1.0 / (1.0 + lam)
        if upper:
            v = np.where(ustar > psi, (ustar + lam * psi) * inv_1lam, ustar)
            r = ustar - v
            e = np.maximum(v - psi, 0.0)
        else:
            v = np.where(ustar < psi, (ustar + lam * psi) * inv_1lam, ustar)
            r = v - ustar
            e = np.maximum(psi - v, 0.0)

        if deposit:
            tb = tbin[s]
            # parabolic component: nearest-bin deposit at xi = u_before
            gc = 0.5 * (gradu + np.roll(gradu, -1))
            mval = (_phi_prime_cl(up, m, delta) + alpha) * gc * gc * h * dt
            bins = np.where(up >= xi_max, nbins,
                            np.clip((np.maximum(up, 0.0) * inv_dxi).astype(np.int64),
                                    0, nbins - 1))
            overflow += int(np.count_nonzero((bins == nbins) & (mval > 0.0)))
            np.add.at(m_acc, (cells, bins, tb), mval)
            # reflection ledger
            nu_acc[:, tb] += h * r
            # obstacle component: uniform density e/eps over the level segment
            contact = np.nonzero(e > 0.0)[0]
            for i in contact:
                if upper:
                    lo, hi = psi[i], v[i]
                else:
                    lo, hi = max(v[i], 0.0), psi[i]
                dens = e[i] * inv_eps * h * dt
                if hi > xi_max:
                    l_acc[i, nbins, tb] += dens * (hi - xi_max)
                    hi = xi_max
                    overflow += 1
                j = max(int(lo * inv_dxi), 0)
                while j < nbins and j * dxi < hi:
                    seg = min(hi, (j + 1) * dxi) - max(lo, j * dxi)
                    if seg > 0.0:
                        l_acc[i, j, tb] += dens * seg
                    j += 1

        diag[s, D_MASS] = h * np.sum(v)
        diag[s, D_L2SQ] = h * np.sum(v * v)
        diag[s, D_MINU] = np.min(v)
        diag[s, D_REFL] = h * np.sum(r)
        diag[s, D_DIST] = h * np.sum(np.abs(v - u_init))
        diag[s, D_EXC1] = h * np.sum(e)
        diag[s, D_EXC2] = h * np.sum(e * e)
        diag[s, D_EPSI] = h * np.sum(e * psi)
        gc = 0.5 * (gradu + np.roll(gradu, -1))
        diag[s, D_DISSIP] = h * np.sum(
            (_phi_prime_cl(up, m, delta) + alpha) * gc * gc)
        sn_c = _sigma_n(up, delta, s_sig, q_sig)
        diag[s, D_NCORR] = h * np.sum(sn_c * sn_c * (divF2_cells - 2.0 * F3_cells))

        u_out[s] = v
        u[:] = v

    return overflow
