import math

import numpy as np
import pytest

from sinaifdd.exceptions import InsufficientPairs
from sinaifdd.measure import MuSampler
from sinaifdd.observables import builtin
from sinaifdd.symbolic import (SeparationResult, close_pairs, component_of, empirical_holder,
                               fit_envelope, future_separation, past_separation,
                               separation_times, strip_index)


def test_strip_examples():
    assert strip_index(0.0) == 0
    assert strip_index(math.pi / 2 - 10.5 ** -2) == 10
    assert strip_index(-math.pi / 2 + 10.5 ** -2) == -10
    assert strip_index(math.pi / 2 - 11.5 ** -2) == 11
    assert component_of((1, 0.2, 0.0)) == (1, 0)
    with pytest.raises(ValueError):
        strip_index(0.0, k0=1)


def test_strips_monotone_towards_grazing():
    phi = np.linspace(0, math.pi / 2, 10_001)
    k = strip_index(phi)
    assert np.all(np.diff(k) >= 0)
    assert np.all(strip_index(-phi) == -k)


@pytest.mark.parametrize("sep", [future_separation, past_separation])
def test_separation_trivial(table, sep):
    x = (0, 0.3, 0.1)
    assert sep(table, x, x, 20) == SeparationResult.censored(20)
    assert sep(table, x, (1, 0.3, 0.1), 20) == SeparationResult.finite(0)


@pytest.mark.parametrize("backward", [False, True])
def test_nearby_pairs_separate(table, backward):
    s = MuSampler(table, 11)
    m, r, phi = s.sample_arrays(500)
    r2 = (r + 1e-6) % table.perimeters[m]
    t, censored, failed = separation_times(table, (m, r, phi), (m, r2, phi), 50, backward)
    t = t[~failed]
    med = np.median(t)
    assert 0 < med < 50
    assert censored.mean() < 0.5


def test_separation_vectorised_matches_scalar(table):
    s = MuSampler(table, 12)
    x, y = close_pairs(s, 40, (-6, -3))
    t, censored, failed = separation_times(table, x, y, 30)
    for i in range(40):
        if failed[i]:
            continue
        res = future_separation(table, (x[0][i], x[1][i], x[2][i]),
                                (y[0][i], y[1][i], y[2][i]), 30)
        assert res.n == t[i]
        assert res.is_finite != censored[i]


def test_fit_envelope_exact():
    s = np.arange(0, 12)
    c, theta = fit_envelope(s, 3 * 0.4 ** s)
    assert c == pytest.approx(3, rel=1e-12) and theta == pytest.approx(0.4, rel=1e-12)


def test_holder_constant(table):
    assert empirical_holder(table, builtin("one", table), 2000, 20)[0] == 0.0


def test_holder_phi(table):
    c, theta = empirical_holder(table, builtin("phi", table), 20_000, 30)
    assert 0 < theta < 1 and c > 0


def test_holder_insufficient_pairs(table):
    with pytest.raises(InsufficientPairs):
        empirical_holder(table, builtin("phi", table), 15, 30)
