import math

import numpy as np
import pytest

from sinaifdd.exceptions import FitFailed
from sinaifdd.fidistats import (ExponentialDecayFit, IndexBlocks, correlation_gap, fit_decay,
                                gap_decay_curve, interlaced_sums_gap, joint_columns,
                                product_columns, sample_joint, sample_product)
from sinaifdd.geometry import collision_map
from sinaifdd.limits import pair_correlation
from sinaifdd.measure import MuSampler
from sinaifdd.observables import FunctionalSpec, builtin, outer, product_functional
from sinaifdd._stats import EstimateReport

from conftest import within

IDENTITY = outer("first")
CONST = outer("constant", value=2.0)


def test_blocks_validation():
    b = IndexBlocks([[0, 1], [3], [5, 6]])
    assert b.K == 3 and b.size == 5 and list(b.boundaries) == [0, 2, 3, 5]
    assert b.gaps == [2, 2]
    assert b.with_gaps(4).blocks == ((0, 1), (5,), (9, 10))
    assert b.shift(2).blocks == ((2, 3), (5,), (7, 8))
    for bad in ([[0, 0]], [[0, 2], [2]], [[3], [1]], [[]], [[-1]], []):
        with pytest.raises(ValueError):
            IndexBlocks(bad)
    IndexBlocks([[0, 0], [0, 1]], strict=False)


def test_sample_joint_examples(table, sampler):
    s = sample_joint(table, sampler, IndexBlocks([[0]]))
    assert s.points[0] == s.bases[0]
    s = sample_joint(table, sampler, IndexBlocks([[0, 1]]))
    nxt = collision_map(table, s.points[0]).end
    assert nxt.scatterer == s.points[1].scatterer
    assert abs(nxt.r - s.points[1].r) < 1e-12 and abs(nxt.phi - s.points[1].phi) < 1e-12
    p = sample_product(table, sampler, IndexBlocks([[0], [2]]))
    assert p.mode == "product" and len(p.bases) == 2


def test_marginal_stationarity(table):
    # mu(cos phi) = pi / 4 at every index
    cols = joint_columns(MuSampler(table, 31), IndexBlocks([[0, 7]]), 200_000)
    for c in (0, 1):
        v = np.cos(cols.phi[:, c])
        rep = EstimateReport(v.mean(), v.std() / math.sqrt(v.size), v.size)
        assert within(rep, math.pi / 4)


def test_product_mode(table):
    blocks = IndexBlocks([[0], [1]])
    cols = product_columns(MuSampler(table, 32), blocks, 200_000)
    a, b = np.sin(cols.phi[:, 0]), np.sin(cols.phi[:, 1])
    z = a * b
    assert abs(z.mean()) < 3 * z.std() / math.sqrt(z.size)
    v = np.cos(cols.phi[:, 1])
    assert abs(v.mean() - math.pi / 4) < 3 * v.std() / math.sqrt(v.size)
    # K = 1: the product law is the joint law, and draws coincide stream for stream
    one = IndexBlocks([[0, 1, 2]])
    j = joint_columns(MuSampler(table, 33), one, 100)
    p = product_columns(MuSampler(table, 33), one, 100)
    assert np.array_equal(j.phi, p.phi)


def test_gap_trivial_functionals(table, sampler):
    blocks = IndexBlocks([[0, 1], [3, 4]])
    F = FunctionalSpec(blocks, builtin("cos_r", table), CONST)
    rep = correlation_gap(table, sampler, F, 20_000)
    assert rep.value == 0.0
    F = FunctionalSpec(blocks, builtin("cos_r", table),
                       outer("tanh_first"))
    assert within(correlation_gap(table, sampler, F, 100_000))


def test_gap_stationary_and_worker_free(table):
    f = builtin("cos_r", table)
    F = FunctionalSpec(IndexBlocks([[0, 1], [3, 4]]), f, outer("tanh_chain", 2))
    a = correlation_gap(table, MuSampler(table, 34), F, 100_000, shard_size=8192, workers=1)
    b = correlation_gap(table, MuSampler(table, 34), F, 100_000, shard_size=8192, workers=4)
    assert a.value == b.value and a.std_error == b.std_error
    G = F.with_blocks(F.blocks.shift(5))
    c = correlation_gap(table, MuSampler(table, 35), G, 100_000)
    assert abs(a.value - c.value) < 3 * math.hypot(a.std_error, c.std_error)


def test_pair_gap_vanishes_at_large_gap(table):
    f = builtin("cos_r", table)
    F = product_functional(IndexBlocks([[0], [1]]), [f, f])
    curve, fit = gap_decay_curve(table, MuSampler(table, 36), F, (1, 2, 3, 20, 30), 200_000)
    assert abs(curve[0][1].value) > abs(curve[1][1].value) > abs(curve[2][1].value)
    assert within(curve[3][1]) and within(curve[4][1])


def test_fit_synthetic():
    g = np.arange(1, 11)
    fit = ExponentialDecayFit().fit(g, 2 * 0.5 ** g).result()
    assert fit.rate_hat == pytest.approx(0.5, rel=1e-12)
    assert fit.prefactor_hat == pytest.approx(2, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0) and fit.ok


def test_fit_noise_floor_truncation():
    g = [1, 2, 3, 4, 5, 6]
    reps = [EstimateReport(v, 0.01, 1000) for v in (0.5, 0.2, 0.08, 0.02, 0.05, 0.04)]
    fit = fit_decay(g, reps)
    assert fit.fit_range == [1, 2, 3]
    with pytest.raises(FitFailed):
        fit_decay(g, [EstimateReport(v, 0.01, 1000) for v in (0.5, 0.2, 0.0, 0.3, 0.3, 0.3)])


def test_fit_status_flags():
    g = np.arange(1, 6)
    fit = ExponentialDecayFit().fit(g, 0.5 * 1.5 ** g).result()
    assert not fit.ok and fit.status == "FitFailed"


def test_interlaced_trivial(table, sampler):
    blocks = IndexBlocks([[0, 1], [3, 4], [6, 7], [9, 10]])
    f = builtin("cos_r", table)
    rep = interlaced_sums_gap(table, sampler, CONST, IDENTITY, blocks, f, 20_000)
    assert abs(rep.value) < 1e-12
    far = IndexBlocks([[0, 1], [51, 52], [103, 104], [155, 156]])
    rep = interlaced_sums_gap(table, sampler, outer("tanh_first"), outer("tanh_first"),
                              far, f, 50_000)
    assert within(rep)


def test_interlaced_identity_is_sum_of_pair_covariances(table):
    # Cov(S1, S2) over I1 = {0, 1}, I2 = {3, 4}: lags 2, 3, 3, 4
    f = builtin("cos_r", table)
    blocks = IndexBlocks([[0, 1], [3, 4]])
    n = 300_000
    rep = interlaced_sums_gap(table, MuSampler(table, 37), IDENTITY, IDENTITY, blocks, f, n)
    curve, _ = pair_correlation(table, MuSampler(table, 38), f, f, (2, 3, 4), n)
    weights = {2: 1, 3: 2, 4: 1}
    value = sum(weights[g] * r.value for g, r in curve)
    se = math.sqrt(sum((weights[g] * r.std_error) ** 2 for g, r in curve))
    assert abs(rep.value - value) < 3 * math.hypot(rep.std_error, se)
    assert abs(rep.value) > 3 * rep.std_error
