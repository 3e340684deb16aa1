"""Compiled inner loops for the collision map.

Everything here works on flat arrays so that the kernels can run without the
GIL; the Python-facing wrappers live in :mod:`sinaifdd.geometry`.
"""

import math

import numba as nb
import numpy as np

OK = 0
GRAZING = 1
NO_COLLISION = 2

TWO_PI = 2.0 * math.pi


@nb.njit(cache=True, nogil=True, inline="always")
def _step(m, r, phi, rad, cand_ptr, cand_j, cand_dx, cand_dy, cand_lo,
          tau_max, eps_graze):
    rm = rad[m]
    theta = r / rm
    cth = math.cos(theta)
    sth = math.sin(theta)
    qx = rm * cth
    qy = rm * sth
    ang = theta + phi
    vx = math.cos(ang)
    vy = math.sin(ang)

    best_t = np.inf
    best_k = -1
    best_disc = 0.0
    for k in range(cand_ptr[m], cand_ptr[m + 1]):
        # lower bound on the distance to this circle from anywhere on circle m
        if cand_lo[k] - rm > best_t or cand_lo[k] - rm > tau_max:
            break
        dx = cand_dx[k]
        dy = cand_dy[k]
        if cand_j[k] == m and dx == 0.0 and dy == 0.0:
            continue
        wx = qx - dx
        wy = qy - dy
        rj = rad[cand_j[k]]
        b = vx * wx + vy * wy
        if b >= 0.0:
            continue
        c = wx * wx + wy * wy - rj * rj
        disc = b * b - c
        if disc < 0.0:
            continue
        t = -b - math.sqrt(disc)
        if t > 0.0 and t < best_t:
            best_t = t
            best_k = k
            best_disc = disc

    if best_k < 0 or best_t > tau_max:
        return m, r, phi, best_t, NO_COLLISION
    if best_disc < eps_graze:
        return m, r, phi, best_t, GRAZING

    j = cand_j[best_k]
    rj = rad[j]
    yx = qx + best_t * vx - cand_dx[best_k]
    yy = qy + best_t * vy - cand_dy[best_k]
    norm = math.hypot(yx, yy)
    nx = yx / norm
    ny = yy / norm
    a = vx * nx + vy * ny
    s = nx * vy - ny * vx
    new_phi = math.atan2(s, -a)
    th = math.atan2(ny, nx)
    if th < 0.0:
        th += TWO_PI
    new_r = rj * th
    if new_r >= TWO_PI * rj:
        new_r = 0.0
    return j, new_r, new_phi, best_t, OK


@nb.njit(cache=True, nogil=True)
def sweep(m0, r0, phi0, record, backward, rad, cand_ptr, cand_j, cand_dx,
          cand_dy, cand_lo, tau_max, eps_graze):
    """Iterate a batch of points, keeping only the iterates listed in ``record``.

    ``record`` must be sorted and non-negative; ``record[c] = i`` stores
    ``T^i x`` (or ``T^-i x`` when ``backward``) in column ``c``. ``flights``
    holds the length of the free flight that ends at each recorded iterate
    (NaN for iterate 0). Failed points get a status code and the index of
    the step that failed; their remaining columns repeat the last good state.
    """
    n = m0.shape[0]
    nrec = record.shape[0]
    n_steps = record[nrec - 1]
    ms = np.empty((n, nrec), dtype=np.int64)
    rs = np.empty((n, nrec))
    phis = np.empty((n, nrec))
    flights = np.full((n, nrec), np.nan)
    status = np.zeros(n, dtype=np.int64)
    fail_at = np.full(n, -1, dtype=np.int64)
    sign = -1.0 if backward else 1.0
    for i in range(n):
        m = m0[i]
        r = r0[i]
        phi = phi0[i]
        c = 0
        while c < nrec and record[c] == 0:
            ms[i, c] = m
            rs[i, c] = r
            phis[i, c] = phi
            c += 1
        for s in range(n_steps):
            m_new, r_new, phi_s, t, st = _step(m, r, sign * phi, rad, cand_ptr,
                                               cand_j, cand_dx, cand_dy, cand_lo,
                                               tau_max, eps_graze)
            if st != OK:
                status[i] = st
                fail_at[i] = s
                while c < nrec:
                    ms[i, c] = m
                    rs[i, c] = r
                    phis[i, c] = phi
                    c += 1
                break
            m = m_new
            r = r_new
            phi = sign * phi_s
            while c < nrec and record[c] == s + 1:
                ms[i, c] = m
                rs[i, c] = r
                phis[i, c] = phi
                flights[i, c] = t
                c += 1
    return ms, rs, phis, flights, status, fail_at


@nb.njit(cache=True, nogil=True)
def count_steps(m0, r0, phi0, n_steps, rad, cand_ptr, cand_j, cand_dx,
                cand_dy, cand_lo, tau_max, eps_graze):
    """Iterate without storing the orbit; used for throughput measurement."""
    n = m0.shape[0]
    done = 0
    acc = 0.0
    for i in range(n):
        m = m0[i]
        r = r0[i]
        phi = phi0[i]
        for s in range(n_steps):
            m, r, phi, t, st = _step(m, r, phi, rad, cand_ptr, cand_j, cand_dx,
                                     cand_dy, cand_lo, tau_max, eps_graze)
            if st != OK:
                break
            acc += phi
            done += 1
    return done, acc
