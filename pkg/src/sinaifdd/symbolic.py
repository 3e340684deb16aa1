"""Homogeneity strips and separation times.

Strip boundaries accumulate at grazing angles: ``b_k = pi/2 - k^-2`` for
``k >= k0`` and mirrored at ``-pi/2``. Consecutive widths
``k^-2 - (k+1)^-2`` are of order ``k^-3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import _kernels
from .exceptions import GrazingCollision, InsufficientPairs, NoCollisionWithinHorizon
from .geometry import check_phase_point, orbits

DEFAULT_K0 = 10
MAX_STRIP = 1 << 40
MIN_PAIRS_PER_BIN = 10


class ComponentId(NamedTuple):
    scatterer: int
    strip: int


@dataclass(frozen=True)
class SeparationResult:
    kind: str
    n: int

    @classmethod
    def finite(cls, n):
        return cls("finite", int(n))

    @classmethod
    def censored(cls, n_max):
        return cls("censored", int(n_max))

    @property
    def is_finite(self):
        return self.kind == "finite"


def strip_index(phi, k0=DEFAULT_K0):
    """Signed homogeneity-strip index of each angle (0 for the central strip)."""
    if k0 < 2:
        raise ValueError("k0 must be at least 2")
    phi = np.asarray(phi, dtype=float)
    depth = math.pi / 2 - np.abs(phi)
    out = np.zeros(phi.shape, dtype=np.int64)
    edge = depth < k0 ** -2.0
    if np.any(edge):
        with np.errstate(divide="ignore"):
            inv = 1.0 / np.sqrt(np.maximum(depth[edge], 0.0))
        k = np.where(np.isfinite(inv), np.ceil(np.minimum(inv, MAX_STRIP)) - 1, MAX_STRIP)
        k = np.maximum(k.astype(np.int64), k0)
        out[edge] = np.sign(phi[edge]).astype(np.int64) * k
    return out


def component_of(p, k0=DEFAULT_K0):
    m, _, phi = p
    return ComponentId(int(m), int(strip_index(phi, k0)))


def separation_times(table, x, y, n_max, backward=False, k0=DEFAULT_K0):
    """Vectorised separation times for arrays of point pairs.

    ``x`` and ``y`` are ``(m, r, phi)`` array triples. Returns
    ``(times, censored, failed)``; censored pairs carry ``n_max``. Pairs
    whose orbits fail before separating are flagged in ``failed``.
    """
    ox = orbits(table, *x, n_steps=n_max, backward=backward)
    oy = orbits(table, *y, n_steps=n_max, backward=backward)
    differ = (ox.m != oy.m) | (strip_index(ox.phi, k0) != strip_index(oy.phi, k0))
    # an orbit that failed at step s is only trusted through iterate s
    valid_to = np.full(ox.m.shape[0], n_max, dtype=np.int64)
    for o in (ox, oy):
        bad = o.status != _kernels.OK
        valid_to[bad] = np.minimum(valid_to[bad], o.fail_at[bad])
    steps = np.arange(n_max + 1)
    differ &= steps[None, :] <= valid_to[:, None]
    any_diff = differ.any(axis=1)
    times = np.where(any_diff, differ.argmax(axis=1), n_max)
    failed = ~any_diff & (valid_to < n_max)
    return times, ~any_diff & ~failed, failed


def _separation(table, x, y, n_max, backward, k0):
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    x = check_phase_point(table, x)
    y = check_phase_point(table, y)
    ox = orbits(table, [x.scatterer], [x.r], [x.phi], n_steps=n_max, backward=backward)
    oy = orbits(table, [y.scatterer], [y.r], [y.phi], n_steps=n_max, backward=backward)
    for n in range(n_max + 1):
        for o in (ox, oy):
            if o.status[0] != _kernels.OK and o.fail_at[0] < n:
                exc = GrazingCollision if o.status[0] == _kernels.GRAZING else NoCollisionWithinHorizon
                raise exc("orbit failed before the trajectories separated",
                          step=int(o.fail_at[0]))
        cx = ComponentId(int(ox.m[0, n]), int(strip_index(ox.phi[0, n], k0)))
        cy = ComponentId(int(oy.m[0, n]), int(strip_index(oy.phi[0, n], k0)))
        if cx != cy:
            return SeparationResult.finite(n)
    return SeparationResult.censored(n_max)


def future_separation(table, x, y, n_max, k0=DEFAULT_K0):
    """First ``n`` with ``T^n x`` and ``T^n y`` in different components."""
    return _separation(table, x, y, n_max, False, k0)


def past_separation(table, x, y, n_max, k0=DEFAULT_K0):
    """As :func:`future_separation` for the inverse map."""
    return _separation(table, x, y, n_max, True, k0)


# --- empirical dynamical Holder envelopes ----------------------------------------

def close_pairs(sampler, n_pairs, log10_range=(-9.0, -2.0)):
    """Pairs ``(x, y)`` differing in ``r`` only (first half) or ``phi`` only.

    Perturbation sizes are log-uniform so that separation times spread out.
    """
    m, r, phi = sampler.sample_arrays(n_pairs)
    lo, hi = log10_range
    size = 10.0 ** sampler.rng.uniform(lo, hi, n_pairs)
    sign = np.where(sampler.rng.random(n_pairs) < 0.5, -1.0, 1.0)
    half = n_pairs // 2
    r2 = r.copy()
    phi2 = phi.copy()
    per = sampler.table.perimeters[m]
    r2[:half] = (r[:half] + sign[:half] * size[:half]) % per[:half]
    # keep the perturbed angle inside [-pi/2, pi/2]
    step = sign[half:] * size[half:]
    phi2[half:] = np.where(np.abs(phi[half:] + step) <= math.pi / 2,
                           phi[half:] + step, phi[half:] - step)
    return (m, r, phi), (m.copy(), r2, phi2)


def holder_pairs(table, f, sampler, pair_budget, n_max, k0=DEFAULT_K0, backward=False):
    """Separation times and oscillations ``|f(x) - f(y)|`` on sampled close pairs."""
    x, y = close_pairs(sampler, pair_budget)
    s, censored, failed = separation_times(table, x, y, n_max, backward, k0)
    fx = np.asarray(f(*x), dtype=float)
    fy = np.asarray(f(*y), dtype=float)
    d = np.abs(fx - fy)
    if d.ndim > 1:
        d = d.max(axis=-1)
    keep = ~failed
    return s[keep], d[keep], censored[keep]


def envelope_bins(s, d, censored=None, min_pairs=MIN_PAIRS_PER_BIN):
    """``(s, max |df|, count)`` for every separation time with enough pairs."""
    s = np.asarray(s)
    d = np.asarray(d, dtype=float)
    if censored is not None:
        s = s[~censored]
        d = d[~censored]
    rows = []
    for v in np.unique(s):
        sel = s == v
        if sel.sum() >= min_pairs:
            rows.append((int(v), float(d[sel].max()), int(sel.sum())))
    return rows


def fit_envelope(s, d):
    """Smallest ``c * theta^s`` envelope with the least-squares slope.

    The slope comes from a straight-line fit of ``log d`` on ``s``; the
    intercept is then raised until every point lies under the curve.
    Returns ``(0, 0.5)`` (``theta`` arbitrary) when all ``d`` vanish.
    """
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    if s.size == 0 or np.all(d == 0):
        return 0.0, 0.5
    pos = d > 0
    if pos.sum() < 2:
        raise InsufficientPairs("need two bins with non-zero oscillation")
    x = s[pos]
    y = np.log(d[pos])
    slope = np.polyfit(x, y, 1)[0] if np.ptp(x) > 0 else 0.0
    theta = float(np.exp(slope))
    intercept = float(np.max(y - slope * x))
    return float(np.exp(intercept)), theta


def empirical_holder(table, f, pair_budget=20_000, n_max=30, sampler=None, seed=0,
                     k0=DEFAULT_K0, backward=False, bins_out=None):
    """Empirical dynamical-Holder parameters ``(c, theta)`` of ``f``.

    Pairs come from perturbing ``r`` or ``phi`` rather than from true
    unstable manifolds, so the envelope is an over-estimate of the
    same-manifold oscillation.
    """
    from .measure import MuSampler

    if sampler is None:
        sampler = MuSampler(table, seed)
    s, d, censored = holder_pairs(table, f, sampler.spawn("holder"), pair_budget, n_max,
                                  k0, backward)
    if np.all(d == 0):
        return 0.0, 0.5
    rows = envelope_bins(s, d, censored)
    if bins_out is not None:
        bins_out.extend(rows)
    if len(rows) < 2:
        raise InsufficientPairs(
            f"fewer than two separation-time bins hold {MIN_PAIRS_PER_BIN} pairs")
    return fit_envelope([r[0] for r in rows], [r[1] for r in rows])
