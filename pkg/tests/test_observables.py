import math

import numpy as np
import pytest

from sinaifdd.exceptions import BoundViolation, ShapeMismatch, UnknownObservable
from sinaifdd.fidistats import IndexBlocks, joint_columns
from sinaifdd.measure import MuSampler
from sinaifdd.observables import (BUILTIN_NAMES, FunctionalSpec, StateColumns, block_sums,
                                  builtin, check_gradient, eval_functional, free_path_values,
                                  lipschitz_ratio, linear, mean_free_path, outer,
                                  product_functional, tanh_sum)


@pytest.fixture(scope="module")
def states(table):
    m, r, phi = MuSampler(table, 21).sample_arrays(100_000)
    return m, r, phi


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_bounds(table, states, name):
    f = builtin(name, table)
    v = np.asarray(f(*states))
    assert v.shape == ((100_000,) if f.dim == 1 else (100_000, f.dim))
    assert np.abs(v).max() <= f.bound + 1e-12


@pytest.mark.parametrize("name", ["sin_phi", "cos_r", "sin_r", "phi", "free_path", "vector"])
def test_centred_means(table, states, name):
    f = builtin(name, table)
    v = np.asarray(f(*states)).reshape(100_000, -1)
    se = v.std(axis=0) / math.sqrt(v.shape[0])
    assert np.all(np.abs(v.mean(axis=0)) < 4 * se)
    assert f.mean_subtracted


def test_one_and_unknown(table):
    one = builtin("one", table)
    assert one.bound == 1 and one.holder[0] == 0
    with pytest.raises(UnknownObservable):
        builtin("nope", table)


def test_mean_free_path_formula(table):
    expect = math.pi * (1 - math.pi * (0.16 + 0.04)) / (2 * math.pi * 0.6)
    assert mean_free_path(table) == pytest.approx(expect)
    m, r, phi = MuSampler(table, 22).sample_arrays(200_000)
    tau = free_path_values(table, m, r, phi)
    assert abs(tau.mean() - expect) < 4 * tau.std() / math.sqrt(tau.size)


def _joint(table, blocks, n=500, seed=23):
    return joint_columns(MuSampler(table, seed), blocks, n)


def test_block_sums_trivial(table):
    blocks = IndexBlocks([[0, 1], [3, 4]])
    cols = _joint(table, blocks)
    F = FunctionalSpec(blocks, builtin("zero", table), outer("sum"))
    assert np.all(block_sums(F, cols) == 0)
    single = IndexBlocks([[2]])
    cols = _joint(table, single)
    F = FunctionalSpec(single, builtin("phi", table), outer("first"))
    assert np.array_equal(block_sums(F, cols)[:, 0], cols.phi[:, 0])


def test_block_sums_direct_oracle(table):
    blocks = IndexBlocks([[0, 2], [5], [7, 8, 9]])
    cols = _joint(table, blocks)
    fs = [builtin(n, table) for n in ("sin_phi", "cos_r", "phi", "sin_r", "cos_r", "sin_phi")]
    F = FunctionalSpec(blocks, fs, outer("sum"))
    got = block_sums(F, cols)
    for row in range(cols.n):
        want = [0.0, 0.0, 0.0]
        for c, k in enumerate(blocks.block_of):
            want[k] += float(fs[c](cols.m[row, c], cols.r[row, c], cols.phi[row, c]))
        assert np.allclose(got[row], want, atol=1e-12, rtol=0)


def test_pair_integrand(table):
    blocks = IndexBlocks([[0], [3]])
    cols = _joint(table, blocks)
    f, g = builtin("sin_phi", table), builtin("cos_r", table)
    prod = FunctionalSpec(blocks, [f, g], outer("product"))
    direct = f(*cols.column(0)) * g(*cols.column(1))
    assert np.allclose(eval_functional(prod, cols), direct, atol=1e-15)
    assert np.allclose(eval_functional(product_functional(blocks, [f, g]), cols), direct)


def test_expi_unit_modulus(table):
    blocks = IndexBlocks([[0, 1], [4]])
    cols = _joint(table, blocks)
    F = FunctionalSpec(blocks, builtin("cos_r", table), outer("expi"))
    z = eval_functional(F, cols)
    assert F.complex_valued and np.allclose(np.hypot(z[:, 0], z[:, 1]), 1.0)


def test_bound_violation(table):
    blocks = IndexBlocks([[0], [1]])
    cols = _joint(table, blocks)
    F = FunctionalSpec(blocks, builtin("phi", table), outer("sum"), bound=0.1)
    with pytest.raises(BoundViolation):
        eval_functional(F, cols)


def test_shape_mismatch(table):
    blocks = IndexBlocks([[0], [1]])
    with pytest.raises(ShapeMismatch):
        FunctionalSpec(blocks, [builtin("phi", table)] * 3, outer("sum"))
    F = FunctionalSpec(blocks, builtin("phi", table), outer("sum"))
    with pytest.raises(ShapeMismatch):
        block_sums(F, _joint(table, IndexBlocks([[0, 1, 2]])))


def test_test_function_gradients():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(100, 3))
    assert check_gradient(tanh_sum(), pts) < 1e-6
    assert check_gradient(linear([1.0, -2.0, 0.5]), pts) < 1e-6


def test_declared_lipschitz_constants():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(200, 3))
    for name in ("first", "sum", "tanh_chain", "tanh_first", "constant"):
        A = outer(name, 3)
        assert lipschitz_ratio(A, pts, rng) <= A.lipschitz + 1e-9
    A = outer("product", 3, radius=1.0)
    # other coordinates stay within the radius, so the constant applies
    inside = np.clip(pts, -0.5, 0.5)
    assert lipschitz_ratio(A, inside, rng) <= A.lipschitz + 1e-9


def test_state_columns():
    cols = StateColumns(np.zeros((4, 3), dtype=int), np.ones((4, 3)), np.zeros((4, 3)))
    assert cols.n == 4 and cols.width == 3
    assert cols.columns([0, 2]).width == 2
