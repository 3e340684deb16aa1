"""Billiard tables on the unit torus and the collision map.

Phase points are ``(scatterer, r, phi)``: ``r`` is arc length measured
counterclockwise from the point of the circle lying in the +x direction from
its center, ``phi`` is the signed angle from the outward normal to the
outgoing velocity (counterclockwise positive).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .exceptions import (
    GrazingCollision,
    InfiniteHorizonDetected,
    NoCollisionWithinHorizon,
    OverlappingScatterers,
    TableNotValidated,
)

EPS_GRAZE = 1e-12
HORIZON_SAFETY = 1.1
DEFAULT_ITERATION_CAP = 100_000


class TorusPoint(NamedTuple):
    x: float
    y: float

    @classmethod
    def wrap(cls, x, y):
        return cls(float(x) % 1.0, float(y) % 1.0)


@dataclass(frozen=True)
class Scatterer:
    center: TorusPoint
    radius: float
    id: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"scatterer radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", TorusPoint.wrap(*self.center))

    @property
    def curvature(self):
        return 1.0 / self.radius

    @property
    def perimeter(self):
        return 2.0 * math.pi * self.radius


class PhasePoint(NamedTuple):
    scatterer: int
    r: float
    phi: float


class CollisionRecord(NamedTuple):
    start: PhasePoint
    end: PhasePoint
    flight_length: float


class Orbit(NamedTuple):
    """Batch of orbit segments as returned by :func:`orbits`."""

    m: np.ndarray
    r: np.ndarray
    phi: np.ndarray
    flight: np.ndarray
    status: np.ndarray
    fail_at: np.ndarray


@dataclass(frozen=True)
class HorizonReport:
    verdict: str
    tau_max: float | None
    worst_corridor: tuple | None
    worst_clear_width: float
    open_corridors: list = field(default_factory=list)
    max_observed_flight: float | None = None
    directions_checked: int = 0
    analytic_complete: bool = False

    def as_record(self):
        return {
            "verdict": self.verdict,
            "tau_max": self.tau_max,
            "worst_corridor": list(self.worst_corridor) if self.worst_corridor else None,
            "worst_clear_width": self.worst_clear_width,
            "open_corridors": [list(c) for c in self.open_corridors],
            "max_observed_flight": self.max_observed_flight,
            "directions_checked": self.directions_checked,
            "analytic_complete": self.analytic_complete,
        }


class BilliardTable:
    """Circular scatterers on the unit torus.

    A table is immutable. ``horizon_bound`` is ``None`` until the table has
    been through :func:`validate_table`; the collision map refuses to run on
    an unvalidated table.
    """

    def __init__(self, scatterers: Sequence, horizon_bound: float | None = None):
        scs = []
        for i, s in enumerate(scatterers):
            if isinstance(s, Scatterer):
                scs.append(Scatterer(s.center, s.radius, i))
            else:
                cx, cy, rad = s
                scs.append(Scatterer(TorusPoint(cx, cy), float(rad), i))
        if not scs:
            raise ValueError("a table needs at least one scatterer")
        self._scatterers = tuple(scs)
        self._horizon_bound = None if horizon_bound is None else float(horizon_bound)
        self._arrays = None

    @classmethod
    def from_spec(cls, spec):
        """Build from a list of ``{cx, cy, radius}`` mappings."""
        scs = []
        for i, item in enumerate(spec):
            missing = [k for k in ("cx", "cy", "radius") if k not in item]
            if missing:
                raise KeyError(f"scatterers[{i}].{missing[0]}")
            scs.append((float(item["cx"]), float(item["cy"]), float(item["radius"])))
        return cls(scs)

    def to_spec(self):
        return [{"cx": s.center.x, "cy": s.center.y, "radius": s.radius}
                for s in self._scatterers]

    @property
    def scatterers(self):
        return self._scatterers

    @property
    def horizon_bound(self):
        return self._horizon_bound

    @property
    def perimeter_total(self):
        return sum(s.perimeter for s in self._scatterers)

    @property
    def radii(self):
        return np.array([s.radius for s in self._scatterers])

    @property
    def perimeters(self):
        return 2.0 * np.pi * self.radii

    @property
    def validated(self):
        return self._horizon_bound is not None

    def with_horizon(self, tau_max):
        return BilliardTable(self._scatterers, tau_max)

    def __repr__(self):
        body = ", ".join(f"({s.center.x:g}, {s.center.y:g}, r={s.radius:g})"
                         for s in self._scatterers)
        return f"BilliardTable([{body}], horizon_bound={self._horizon_bound})"

    def __eq__(self, other):
        return (isinstance(other, BilliardTable)
                and self.to_spec() == other.to_spec()
                and self._horizon_bound == other._horizon_bound)

    def __hash__(self):
        return hash((tuple(map(tuple, (d.values() for d in self.to_spec()))),
                     self._horizon_bound))

    def kernel_arrays(self, search_radius=None):
        """Candidate lattice translates per source scatterer.

        For a source circle ``m`` we keep every translate of every circle
        whose center lies within ``search + r_m + r_j`` of ``m``'s center,
        sorted by the lower bound ``|d| - r_j`` on the flight length.
        """
        if search_radius is None:
            if self._horizon_bound is None:
                raise TableNotValidated("run validate_table before iterating the map")
            if self._arrays is not None:
                return self._arrays
            search_radius = self._horizon_bound
        arrays = _candidate_arrays(self._scatterers, search_radius)
        if search_radius == self._horizon_bound:
            self._arrays = arrays
        return arrays


def _candidate_arrays(scatterers, search):
    centers = np.array([s.center for s in scatterers], dtype=float)
    rad = np.array([s.radius for s in scatterers], dtype=float)
    rmax = rad.max()
    span = int(math.ceil(search + 2 * rmax)) + 1
    shifts = np.arange(-span, span + 1, dtype=float)
    sx, sy = np.meshgrid(shifts, shifts, indexing="ij")
    sx = sx.ravel()
    sy = sy.ravel()
    ptr = [0]
    js, dxs, dys, los = [], [], [], []
    for m in range(len(scatterers)):
        rows = []
        for j in range(len(scatterers)):
            dx = centers[j, 0] - centers[m, 0] + sx
            dy = centers[j, 1] - centers[m, 1] + sy
            dist = np.hypot(dx, dy)
            keep = dist <= search + rad[m] + rad[j]
            for a, b, d in zip(dx[keep], dy[keep], dist[keep]):
                rows.append((d - rad[j], j, a, b))
        rows.sort()
        for lo, j, a, b in rows:
            los.append(lo)
            js.append(j)
            dxs.append(a)
            dys.append(b)
        ptr.append(len(js))
    return (rad, np.array(ptr, dtype=np.int64), np.array(js, dtype=np.int64),
            np.array(dxs), np.array(dys), np.array(los), float(search))


def check_phase_point(table, p):
    m, r, phi = p
    if not 0 <= int(m) < len(table.scatterers):
        raise ValueError(f"unknown scatterer id {m}")
    if abs(phi) > math.pi / 2 + 1e-15:
        raise ValueError(f"|phi| must not exceed pi/2, got {phi}")
    per = table.scatterers[int(m)].perimeter
    return PhasePoint(int(m), float(r) % per, float(phi))


def boundary_embed(table, p):
    """Position, outgoing velocity and outward normal of a phase point."""
    p = check_phase_point(table, p)
    sc = table.scatterers[p.scatterer]
    theta = p.r / sc.radius
    normal = np.array([math.cos(theta), math.sin(theta)])
    velocity = np.array([math.cos(theta + p.phi), math.sin(theta + p.phi)])
    position = TorusPoint.wrap(sc.center.x + sc.radius * normal[0],
                               sc.center.y + sc.radius * normal[1])
    return position, velocity, normal


def embed_arrays(table, m, r, phi):
    """Vectorised :func:`boundary_embed`; positions are *not* reduced mod 1."""
    centers = np.array([s.center for s in table.scatterers])
    rad = table.radii[m]
    theta = r / rad
    normal = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    velocity = np.stack([np.cos(theta + phi), np.sin(theta + phi)], axis=-1)
    position = centers[m] + rad[..., None] * normal
    return position, velocity, normal


def orbits(table, m, r, phi, n_steps=None, backward=False, record=None):
    """Iterate a batch of phase points; failures are flagged, not raised.

    Either ``n_steps`` (record every iterate ``0..n_steps``) or an explicit
    sorted ``record`` of iterate indices must be given.
    """
    rad, ptr, cj, cdx, cdy, clo, tau = table.kernel_arrays()
    if record is None:
        record = np.arange(int(n_steps) + 1)
    record = np.ascontiguousarray(record, dtype=np.int64)
    m = np.ascontiguousarray(m, dtype=np.int64)
    r = np.ascontiguousarray(r, dtype=float)
    phi = np.ascontiguousarray(phi, dtype=float)
    out = _kernels.sweep(m, r, phi, record, bool(backward), rad, ptr, cj, cdx, cdy,
                         clo, tau, EPS_GRAZE)
    return Orbit(*out)


def _raise_for(status, p, step):
    if status == _kernels.GRAZING:
        raise GrazingCollision(f"tangential hit from {tuple(p)}", step=step, point=p)
    raise NoCollisionWithinHorizon(
        f"no scatterer within the horizon bound from {tuple(p)}", step=step, point=p)


def _single(table, p, backward):
    p = check_phase_point(table, p)
    o = orbits(table, [p.scatterer], [p.r], [p.phi], 1, backward)
    if o.status[0] != _kernels.OK:
        _raise_for(o.status[0], p, 0)
    end = PhasePoint(int(o.m[0, 1]), float(o.r[0, 1]), float(o.phi[0, 1]))
    return CollisionRecord(p, end, float(o.flight[0, 1]))


def collision_map(table, p):
    """One application of the collision map."""
    return _single(table, p, False)


def inverse_collision_map(table, p):
    """One application of the inverse map, computed as R T R with R(r, phi) = (r, -phi)."""
    return _single(table, p, True)


def iterate(table, p, n, cap=DEFAULT_ITERATION_CAP):
    """``T^n p`` for signed ``n``."""
    n = int(n)
    if abs(n) > cap:
        raise ValueError(f"|n| = {abs(n)} exceeds the iteration cap {cap}")
    p = check_phase_point(table, p)
    if n == 0:
        return p
    o = orbits(table, [p.scatterer], [p.r], [p.phi], abs(n), n < 0)
    if o.status[0] != _kernels.OK:
        q = PhasePoint(int(o.m[0, -1]), float(o.r[0, -1]), float(o.phi[0, -1]))
        _raise_for(o.status[0], q, int(o.fail_at[0]))
    return PhasePoint(int(o.m[0, -1]), float(o.r[0, -1]), float(o.phi[0, -1]))


def reflect_phase(p):
    """The time-reversal involution R(r, phi) = (r, -phi)."""
    return PhasePoint(p[0], p[1], -p[2])


# --- horizon validation -------------------------------------------------------

def check_disjoint(table, tol=0.0):
    scs = table.scatterers
    for a in range(len(scs)):
        for b in range(a, len(scs)):
            dx = scs[b].center.x - scs[a].center.x
            dy = scs[b].center.y - scs[a].center.y
            need = scs[a].radius + scs[b].radius + tol
            for i in (-1, 0, 1):
                for j in (-1, 0, 1):
                    if a == b and i == 0 and j == 0:
                        continue
                    if math.hypot(dx + i, dy + j) <= need:
                        raise OverlappingScatterers(
                            f"scatterers {a} and {b} intersect (translate {i},{j})")


def rational_directions(p_max):
    """Primitive directions ``(p, q)`` up to sign, shortest first."""
    dirs = []
    for p in range(0, p_max + 1):
        for q in range(-p_max, p_max + 1):
            if p == 0 and q <= 0:
                continue
            if math.gcd(p, abs(q)) != 1:
                continue
            dirs.append((p, q))
    dirs.sort(key=lambda d: (d[0] ** 2 + d[1] ** 2, d[1] < 0, d[0] < abs(d[1])))
    return dirs


def corridor_clear_width(table, direction):
    """Width of the widest scatterer-free strip parallel to ``direction``.

    Strips parallel to a primitive lattice direction ``(p, q)`` repeat with
    period ``1/sqrt(p^2+q^2)`` across the torus; each disk shadows an
    interval of length ``2 r`` on that circle of normal offsets.
    """
    p, q = direction
    length = math.hypot(p, q)
    period = 1.0 / length
    nx, ny = -q / length, p / length
    starts = []
    for s in table.scatterers:
        if 2 * s.radius >= period:
            return -(2 * s.radius - period)
        off = (s.center.x * nx + s.center.y * ny) % period
        starts.append(((off - s.radius) % period, 2 * s.radius))
    starts.sort()
    first = starts[0][0]
    reach = first + starts[0][1]
    widest = -math.inf
    for a, w in starts[1:]:
        widest = max(widest, a - reach)
        reach = max(reach, a + w)
    widest = max(widest, first + period - reach)
    return widest


def validate_table(table, p_max=5, n_rays=100_000, seed=0, raise_on_infinite=True):
    """Certify finite horizon and compute the horizon bound.

    The analytic part checks all primitive directions with ``|p|, |q| <= p_max``;
    directions whose strip period is below the largest diameter are blocked
    trivially, so the check is exhaustive once ``p_max`` covers the rest.
    The stochastic part shoots ``n_rays`` rays drawn from the invariant
    measure and sets ``tau_max`` to 1.1 times the longest observed flight.

    Returns ``(report, validated_table)``.
    """
    check_disjoint(table)
    dirs = rational_directions(p_max)
    widths = [(corridor_clear_width(table, d), d) for d in dirs]
    open_ = [d for w, d in widths if w > 0]
    worst_w, worst_d = max(widths, key=lambda t: t[0])
    dmax = 2 * table.radii.max()
    # every direction not listed is blocked if its strip period is below dmax
    complete = (p_max + 1) ** 2 >= 1.0 / dmax ** 2

    max_flight = None
    if not open_:
        max_flight = _max_free_path(table, n_rays, seed)
        if max_flight is None:
            open_ = ["stochastic"]
    if open_:
        report = HorizonReport("infinite", None, worst_d if worst_w > 0 else None,
                               worst_w, open_, max_flight, len(dirs), complete)
        if raise_on_infinite:
            raise InfiniteHorizonDetected(
                f"open corridor in direction {report.worst_corridor} "
                f"(clear width {worst_w:.6g})", report=report)
        return report, table
    tau = HORIZON_SAFETY * max_flight
    report = HorizonReport("finite", tau, worst_d, worst_w, [], max_flight,
                           len(dirs), complete)
    return report, table.with_horizon(tau)


def _max_free_path(table, n_rays, seed, start=2.0, limit=64.0):
    from .measure import MuSampler

    pts = MuSampler(table, seed, stream=("horizon",)).sample_arrays(n_rays)
    search = start
    while search <= limit:
        rad, ptr, cj, cdx, cdy, clo, tau = _candidate_arrays(table.scatterers, search)
        o = _kernels.sweep(pts[0], pts[1], pts[2], np.array([0, 1]), False, rad,
                           ptr, cj, cdx, cdy, clo, tau, EPS_GRAZE)
        status = o[4]
        if not np.any(status == _kernels.NO_COLLISION):
            flights = o[3][status == _kernels.OK, 1]
            return float(flights.max())
        search *= 2
    return None


def reference_table(p_max=5, n_rays=100_000, seed=0):
    """Disks of radius 0.4 at (0, 0) and 0.2 at (0.5, 0.5), validated."""
    raw = BilliardTable([(0.0, 0.0, 0.4), (0.5, 0.5, 0.2)])
    return validate_table(raw, p_max, n_rays, seed)[1]
