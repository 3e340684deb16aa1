"""Sampling from the invariant measure ``const * cos(phi) dr dphi``."""

from __future__ import annotations

import zlib

import numpy as np

from . import _kernels
from .exceptions import GrazingRateExceeded, NoCollisionWithinHorizon
from .geometry import PhasePoint, orbits

MAX_GRAZING_RATE = 1e-6


def _flatten(path):
    for p in path:
        if isinstance(p, (tuple, list)):
            yield from _flatten(p)
        else:
            yield p


def _path_word(item):
    if isinstance(item, str):
        return zlib.crc32(item.encode())
    return int(item) & 0xFFFFFFFFFFFFFFFF


def stream_generator(seed, path=()):
    """Philox generator keyed by ``(seed, *path)``.

    Streams with different paths are statistically independent and the key
    does not depend on how work is later distributed over workers.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_path_word(p) for p in _flatten(path)]
    key = np.random.SeedSequence(words).generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def phi_from_uniform(u):
    """Inverse CDF of the angle marginal ``cos(phi)/2`` on ``[-pi/2, pi/2]``."""
    return np.arcsin(np.clip(2.0 * np.asarray(u, dtype=float) - 1.0, -1.0, 1.0))


def phi_cdf(phi):
    return 0.5 * (1.0 + np.sin(phi))


class MuSampler:
    """Draws phase points from the invariant measure of ``table``.

    ``normalization`` is the density constant ``1/(2L)`` with ``L`` the total
    perimeter.
    """

    def __init__(self, table, seed=0, stream=()):
        self.table = table
        self.seed = int(seed)
        self.stream = tuple(_flatten(stream))
        self.rng = stream_generator(self.seed, self.stream)
        per = table.perimeters
        self.weights = per / per.sum()
        self._cum = np.cumsum(self.weights)
        self._cum[-1] = 1.0
        self.normalization = 1.0 / (2.0 * table.perimeter_total)
        self.grazing_resamples = 0
        self.horizon_misses = 0
        self.evaluations = 0

    def spawn(self, *path):
        return MuSampler(self.table, self.seed, self.stream + tuple(_flatten(path)))

    def sample_arrays(self, n):
        u = self.rng.random((3, int(n)))
        m = np.searchsorted(self._cum, u[0], side="right").astype(np.int64)
        m = np.minimum(m, len(self.weights) - 1)
        r = u[1] * self.table.perimeters[m]
        phi = phi_from_uniform(u[2])
        return m, r, phi

    def sample(self):
        m, r, phi = self.sample_arrays(1)
        return PhasePoint(int(m[0]), float(r[0]), float(phi[0]))

    def sample_orbits(self, n, record, backward=False):
        """``n`` mu-distributed starts iterated through ``record``.

        Starts whose orbit hits a tangential collision (or, on a badly
        validated table, no collision) are redrawn; both are counted.
        """
        record = np.asarray(record, dtype=np.int64)
        m, r, phi = self.sample_arrays(n)
        o = orbits(self.table, m, r, phi, backward=backward, record=record)
        self.evaluations += int(n) * int(record[-1])
        bad = np.flatnonzero(o.status != _kernels.OK)
        while bad.size:
            self.grazing_resamples += int(np.sum(o.status[bad] == _kernels.GRAZING))
            self.horizon_misses += int(np.sum(o.status[bad] == _kernels.NO_COLLISION))
            self.check_rates()
            m2, r2, phi2 = self.sample_arrays(bad.size)
            o2 = orbits(self.table, m2, r2, phi2, backward=backward, record=record)
            self.evaluations += int(bad.size) * int(record[-1])
            for arr, new in zip(o, o2):
                arr[bad] = new
            bad = bad[o2.status != _kernels.OK]
        return o

    def check_rates(self):
        evals = max(self.evaluations, 1)
        if self.horizon_misses and self.horizon_misses / evals > MAX_GRAZING_RATE:
            raise NoCollisionWithinHorizon(
                f"{self.horizon_misses} flights exceeded the horizon bound "
                f"in {evals} collisions")
        if self.grazing_resamples / evals > MAX_GRAZING_RATE:
            raise GrazingRateExceeded(
                f"{self.grazing_resamples} grazing collisions in {evals} evaluations")


def sample_mu(sampler):
    return sampler.sample()


def invariance_test(sampler, g, n_samples, backward=False, shard_size=None,
                    workers=None):
    """Means of ``g(x)`` and ``g(Tx)`` (or ``g(T^-1 x)``) for ``x ~ mu``.

    Returns a pair of :class:`EstimateReport`; under invariance the two
    values agree within their combined standard error.
    """
    from ._stats import Moments, report_mean
    from .parallel import run_shards

    def shard(index, size):
        s = sampler.spawn("invariance", index)
        o = s.sample_orbits(size, [0, 1], backward=backward)
        before = np.asarray(g(o.m[:, 0], o.r[:, 0], o.phi[:, 0]), dtype=float)
        after = np.asarray(g(o.m[:, 1], o.r[:, 1], o.phi[:, 1]), dtype=float)
        z = np.column_stack([before.reshape(size, -1)[:, 0], after.reshape(size, -1)[:, 0]])
        return Moments.from_samples(z), s.grazing_resamples

    results = run_shards(shard, n_samples, shard_size=shard_size, workers=workers)
    mom = Moments.merge_all([r[0] for r in results])
    resamples = sum(r[1] for r in results)
    seeds = [sampler.seed]
    return (report_mean(mom, 0, seeds, resamples),
            report_mean(mom, 1, seeds, resamples))
