"""Mergeable moment accumulators and Monte Carlo estimate records."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


class Moments:
    """Count, mean vector and co-moment matrix of a stream of vectors.

    Merging uses the pairwise update of Chan, Golub and LeVeque, so shards
    can be reduced in any fixed order.
    """

    def __init__(self, n, mean, comoment):
        self.n = int(n)
        self.mean = np.asarray(mean, dtype=float)
        self.comoment = np.asarray(comoment, dtype=float)

    @classmethod
    def from_samples(cls, z):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        n = z.shape[0]
        mean = z.mean(axis=0)
        dz = z - mean
        return cls(n, mean, dz.T @ dz)

    @classmethod
    def empty(cls, d):
        return cls(0, np.zeros(d), np.zeros((d, d)))

    @property
    def dim(self):
        return self.mean.shape[0]

    def merge(self, other):
        if other.n == 0:
            return self
        if self.n == 0:
            return other
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        com = self.comoment + other.comoment + np.outer(delta, delta) * (self.n * other.n / n)
        return Moments(n, mean, com)

    @staticmethod
    def merge_all(items):
        items = list(items)
        # balanced pairwise reduction; the order is fixed by the shard order
        while len(items) > 1:
            nxt = [items[i].merge(items[i + 1]) for i in range(0, len(items) - 1, 2)]
            if len(items) % 2:
                nxt.append(items[-1])
            items = nxt
        return items[0]

    @property
    def cov(self):
        if self.n < 2:
            return np.full_like(self.comoment, np.nan)
        return self.comoment / (self.n - 1)

    @property
    def var(self):
        return np.diag(self.cov)

    def std_error(self, i=0):
        return float(np.sqrt(self.var[i] / self.n))


@dataclass
class EstimateReport:
    value: float
    std_error: float
    n_samples: int
    seeds: list = field(default_factory=list)
    resample_count: int = 0
    detail: dict = field(default_factory=dict)

    def as_record(self):
        return asdict(self)

    def within(self, target, n_se=3.0):
        return abs(self.value - target) <= n_se * self.std_error


def report_mean(mom, i, seeds, resamples=0):
    return EstimateReport(float(mom.mean[i]), mom.std_error(i), mom.n, list(seeds),
                          int(resamples))


def delta_method(mom, g, grad):
    """Estimate ``g(E z)`` with a first-order standard error."""
    value = float(g(mom.mean))
    gr = np.asarray(grad(mom.mean), dtype=float)
    var = float(gr @ mom.cov @ gr) / mom.n if mom.n > 1 else np.nan
    return value, float(np.sqrt(max(var, 0.0)))


def difference(a, b, seeds=(), resamples=0):
    """``a - b`` for two independent estimate reports."""
    return EstimateReport(a.value - b.value, float(np.hypot(a.std_error, b.std_error)),
                          min(a.n_samples, b.n_samples), list(seeds) or a.seeds,
                          int(resamples))
