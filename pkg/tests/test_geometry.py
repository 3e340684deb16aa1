import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sinaifdd import _kernels
from sinaifdd.exceptions import (GrazingCollision, InfiniteHorizonDetected,
                                 NoCollisionWithinHorizon, OverlappingScatterers,
                                 TableNotValidated)
from sinaifdd.geometry import (BilliardTable, PhasePoint, boundary_embed, collision_map,
                               corridor_clear_width, embed_arrays, inverse_collision_map,
                               iterate, orbits, reflect_phase, validate_table)
from sinaifdd.measure import MuSampler

DIAG = math.pi / 4


def oracle_step(table, m, r, phi, dps=40):
    """Collision map by brute force over translates in extended precision."""
    mp.mp.dps = dps
    scs = table.scatterers
    R = mp.mpf(scs[m].radius)
    th = mp.mpf(r) / R
    px = scs[m].center.x + R * mp.cos(th)
    py = scs[m].center.y + R * mp.sin(th)
    ux = mp.cos(th + mp.mpf(phi))
    uy = mp.sin(th + mp.mpf(phi))
    best = None
    for j, s in enumerate(scs):
        for a in range(-3, 4):
            for b in range(-3, 4):
                dx = px - (s.center.x + a)
                dy = py - (s.center.y + b)
                du = dx * ux + dy * uy
                disc = du * du - (dx * dx + dy * dy - mp.mpf(s.radius) ** 2)
                if disc < 0:
                    continue
                t = -du - mp.sqrt(disc)
                if t > mp.mpf(10) ** -20 and (best is None or t < best[0]):
                    best = (t, j, a, b)
    t, j, a, b = best
    s = scs[j]
    qx = px + t * ux - (s.center.x + a)
    qy = py + t * uy - (s.center.y + b)
    nx, ny = qx / s.radius, qy / s.radius
    dot = ux * nx + uy * ny
    vx, vy = ux - 2 * dot * nx, uy - 2 * dot * ny
    th2 = mp.atan2(ny, nx) % (2 * mp.pi)
    phi2 = mp.atan2(nx * vy - ny * vx, nx * vx + ny * vy)
    return j, float(th2 * s.radius), float(phi2), float(t)


def test_boundary_embed_examples():
    t = BilliardTable([(0.0, 0.0, 0.4)])
    pos, vel, nrm = boundary_embed(t, (0, 0.0, 0.0))
    assert np.allclose(pos, (0.4, 0.0)) and np.allclose(vel, (1, 0)) and np.allclose(nrm, (1, 0))
    _, vel, _ = boundary_embed(t, (0, 0.0, math.pi / 2))
    assert np.allclose(vel, (0, 1))
    pos, vel, _ = boundary_embed(t, (0, 0.2 * math.pi, 0.0))
    assert np.allclose(pos, (0.0, 0.4)) and np.allclose(vel, (0, 1))


def test_diagonal_collision(table):
    start = PhasePoint(0, 0.4 * DIAG, 0.0)
    rec = collision_map(table, start)
    assert rec.end.scatterer == 1
    assert rec.end.r == pytest.approx(0.2 * 5 * DIAG, abs=1e-12)
    assert rec.end.phi == pytest.approx(0.0, abs=1e-12)
    assert rec.flight_length == pytest.approx(math.sqrt(2) / 2 - 0.6, abs=1e-12)
    back = inverse_collision_map(table, rec.end)
    assert back.end.scatterer == 0
    assert back.end.r == pytest.approx(start.r, abs=1e-12)
    assert back.end.phi == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(m=st.integers(0, 1), u=st.floats(0, 1, exclude_max=True))
def test_normal_incidence_property(table, m, u):
    r = u * table.perimeters[m]
    rec = collision_map(table, (m, r, 0.0))
    assert 0 < rec.flight_length <= table.horizon_bound
    assert abs(rec.end.phi) <= math.pi / 2


def test_matches_extended_precision_oracle(table):
    s = MuSampler(table, 7)
    m, r, phi = s.sample_arrays(150)
    o = orbits(table, m, r, phi, 1)
    for i in range(m.size):
        j, r2, phi2, t = oracle_step(table, int(m[i]), r[i], phi[i])
        assert o.m[i, 1] == j
        per = table.perimeters[j]
        dr = (o.r[i, 1] - r2 + per / 2) % per - per / 2
        assert abs(dr) < 1e-10
        assert abs(o.phi[i, 1] - phi2) < 1e-10
        assert abs(o.flight[i, 1] - t) < 1e-10


def _round_trip_error(table, n, seed):
    m, r, phi = MuSampler(table, seed).sample_arrays(n)
    fw = orbits(table, m, r, phi, 1)
    ok = fw.status == _kernels.OK
    bw = orbits(table, fw.m[ok, 1], fw.r[ok, 1], fw.phi[ok, 1], 1, backward=True)
    per = table.perimeters[m[ok]]
    dr = (bw.r[:, 1] - r[ok] + per / 2) % per - per / 2
    assert np.all(bw.m[:, 1] == m[ok])
    return max(np.abs(dr).max(), np.abs(bw.phi[:, 1] - phi[ok]).max())


def test_round_trip(table):
    assert _round_trip_error(table, 10_000, 1) < 1e-9


def _reflection_error(table, n, seed):
    m, r, phi = MuSampler(table, seed).sample_arrays(n)
    o = orbits(table, m, r, phi, 1)
    ok = o.status == _kernels.OK
    _, u, _ = embed_arrays(table, m[ok], r[ok], phi[ok])
    _, v, nrm = embed_arrays(table, o.m[ok, 1], o.r[ok, 1], o.phi[ok, 1])
    dot = np.sum(u * nrm, axis=1)
    expect = u - 2 * dot[:, None] * nrm
    return np.abs(v - expect).max()


def test_specular_reflection(table):
    assert _reflection_error(table, 10_000, 2) < 1e-10


def test_time_reversal_identity(table):
    # R T^-1 R = T
    s = MuSampler(table, 3)
    for _ in range(200):
        p = s.sample()
        a = collision_map(table, p).end
        b = reflect_phase(inverse_collision_map(table, reflect_phase(p)).end)
        assert a.scatterer == b.scatterer
        assert abs(a.r - b.r) < 1e-9 and abs(a.phi - b.phi) < 1e-9


def test_iterate(table):
    p = MuSampler(table, 4).sample()
    assert iterate(table, p, 0) == p
    twice = collision_map(table, collision_map(table, p).end).end
    q = iterate(table, p, 2)
    assert q.scatterer == twice.scatterer
    assert abs(q.r - twice.r) < 1e-12 and abs(q.phi - twice.phi) < 1e-12
    for n in (5, 10, -10):
        back = iterate(table, iterate(table, p, n), -n)
        assert back.scatterer == p.scatterer
        assert abs(back.r - p.r) < 1e-7 * abs(n) and abs(back.phi - p.phi) < 1e-7 * abs(n)
    with pytest.raises(ValueError):
        iterate(table, p, 10, cap=5)


def test_deterministic(table):
    p = (0, 0.3, 0.2)
    a = iterate(table, p, 50)
    b = iterate(table, p, 50)
    assert a == b


def test_unvalidated_table_refuses():
    raw = BilliardTable([(0.0, 0.0, 0.4), (0.5, 0.5, 0.2)])
    with pytest.raises(TableNotValidated):
        collision_map(raw, (0, 0.0, 0.0))


def test_bad_phase_point(table):
    with pytest.raises(ValueError):
        collision_map(table, (0, 0.0, 2.0))
    with pytest.raises(ValueError):
        collision_map(table, (5, 0.0, 0.0))


def test_no_collision_within_bound(table):
    short = table.with_horizon(0.01)
    with pytest.raises(NoCollisionWithinHorizon):
        collision_map(short, (0, 0.4 * DIAG, 0.0))


def test_grazing_collision(table):
    # ray from the big disk tangent to the small one
    a = DIAG
    P = np.array([0.4 * math.cos(a), 0.4 * math.sin(a)])
    C = np.array([0.5, 0.5])
    d = np.linalg.norm(C - P)
    base = math.atan2(*(C - P)[::-1])
    phi = base + math.asin(0.2 / d) - a
    with pytest.raises(GrazingCollision):
        collision_map(table, (0, 0.4 * a, phi))


def test_validator_reference(table):
    assert table.validated
    report, _ = validate_table(BilliardTable(table.scatterers), p_max=5)
    assert report.verdict == "finite"
    assert report.tau_max > 0
    assert report.open_corridors == []


def test_validator_single_disk():
    with pytest.raises(InfiniteHorizonDetected) as err:
        validate_table(BilliardTable([(0.0, 0.0, 0.3)]))
    rep = err.value.report
    assert rep.verdict == "infinite"
    assert tuple(rep.worst_corridor) == (1, 0)
    assert rep.worst_clear_width == pytest.approx(0.4, abs=1e-12)


def test_validator_equal_disks_diagonal():
    t = BilliardTable([(0.0, 0.0, 0.3), (0.5, 0.5, 0.3)])
    rep, _ = validate_table(t, raise_on_infinite=False)
    assert rep.verdict == "infinite"
    assert corridor_clear_width(t, (1, 0)) < 0
    assert corridor_clear_width(t, (1, 1)) == pytest.approx(1 / math.sqrt(2) - 0.6, abs=1e-12)
    assert (1, 1) in [tuple(c) for c in rep.open_corridors]


def test_overlap_rejected():
    with pytest.raises(OverlappingScatterers):
        validate_table(BilliardTable([(0.0, 0.0, 0.4), (0.5, 0.5, 0.35)]))


def test_from_spec_missing_key():
    with pytest.raises(KeyError, match="radius"):
        BilliardTable.from_spec([{"cx": 0, "cy": 0}])
