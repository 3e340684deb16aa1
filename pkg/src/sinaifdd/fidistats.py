"""Joint and product finite-dimensional distributions of the billiard process.

The central estimate is the functional correlation gap

    | E_joint F  -  E_product F |

where the joint law is that of ``(T^i x)_{i in I}`` with ``x ~ mu`` and the
product law draws each block from an independent start.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin

from ._stats import EstimateReport, Moments, delta_method, difference
from .exceptions import FitFailed, ShapeMismatch
from .geometry import PhasePoint
from .observables import StateColumns, eval_functional
from .parallel import run_shards, shard_sizes

__all__ = [
    "IndexBlocks", "JointSample", "EstimateReport", "DecayFit", "ExponentialDecayFit",
    "sample_joint", "sample_product", "joint_columns", "product_columns",
    "correlation_gap", "gap_decay_curve", "interlaced_sums_gap", "DEFAULT_GAPS",
]

DEFAULT_GAPS = (1, 2, 3, 4, 6, 8, 10, 13, 16, 20, 25, 30)
MAX_SHARD_CELLS = 1 << 21


class IndexBlocks:
    """Ordered, disjoint index sets ``I_1 <= ... <= I_K``.

    With ``strict=False`` indices may repeat inside a block and consecutive
    blocks may touch; this relaxed layout is used internally for moments
    such as ``mu(f f^l f^m f^n)`` with ``l = m``.
    """

    def __init__(self, blocks: Sequence[Sequence[int]], strict=True):
        bl = [tuple(int(i) for i in b) for b in blocks]
        if not bl:
            raise ValueError("need at least one block")
        prev = -1
        for k, b in enumerate(bl):
            if not b:
                raise ValueError(f"block {k} is empty")
            if b[0] < 0:
                raise ValueError("indices must be non-negative")
            if strict:
                if any(y <= x for x, y in zip(b, b[1:])):
                    raise ValueError(f"block {k} is not strictly increasing")
                if b[0] <= prev:
                    raise ValueError(f"block {k} does not start after block {k - 1}")
            else:
                if any(y < x for x, y in zip(b, b[1:])) or b[0] < prev:
                    raise ValueError(f"block {k} is out of order")
            prev = b[-1]
        self.blocks = tuple(bl)
        self.strict = strict

    def __repr__(self):
        return f"IndexBlocks({[list(b) for b in self.blocks]})"

    def __eq__(self, other):
        return isinstance(other, IndexBlocks) and self.blocks == other.blocks

    def __hash__(self):
        return hash(self.blocks)

    @property
    def K(self):
        return len(self.blocks)

    @property
    def indices(self):
        return np.array([i for b in self.blocks for i in b], dtype=np.int64)

    @property
    def size(self):
        return sum(len(b) for b in self.blocks)

    @property
    def boundaries(self):
        """``p_0 = 0 < p_1 < ... < p_K``."""
        return np.concatenate([[0], np.cumsum([len(b) for b in self.blocks])])

    @property
    def gaps(self):
        return [self.blocks[k + 1][0] - self.blocks[k][-1] for k in range(self.K - 1)]

    @property
    def block_of(self):
        return [k for k, b in enumerate(self.blocks) for _ in b]

    def shift(self, m):
        return IndexBlocks([[i + m for i in b] for b in self.blocks], self.strict)

    def with_gaps(self, gaps):
        """Same block shapes, first block fixed, consecutive gaps set to ``gaps``."""
        if np.isscalar(gaps):
            gaps = [gaps] * (self.K - 1)
        if len(gaps) != self.K - 1:
            raise ValueError(f"need {self.K - 1} gaps")
        out = [self.blocks[0]]
        for b, g in zip(self.blocks[1:], gaps):
            start = out[-1][-1] + int(g)
            out.append(tuple(start + i - b[0] for i in b))
        return IndexBlocks(out, self.strict)

    def relative(self, k):
        b = self.blocks[k]
        return np.array([i - b[0] for i in b], dtype=np.int64)


class JointSample(NamedTuple):
    points: tuple
    mode: str
    seed: int
    bases: tuple


def _shard_size(record_len, requested=None):
    if requested:
        return int(requested)
    return int(max(256, min(1 << 15, MAX_SHARD_CELLS // max(1, record_len))))


def joint_columns(sampler, blocks, n):
    """``n`` joint samples from one trajectory sweep per start."""
    o = sampler.sample_orbits(n, blocks.indices)
    return StateColumns(o.m, o.r, o.phi)


def product_columns(sampler, blocks, n):
    """``n`` product samples; block ``k`` is started afresh at iterate 0.

    By stationarity the law of block ``k`` is still ``P_{I_k}``.
    """
    ms, rs, ps = [], [], []
    for k in range(blocks.K):
        o = sampler.sample_orbits(n, blocks.relative(k))
        ms.append(o.m)
        rs.append(o.r)
        ps.append(o.phi)
    return StateColumns(np.hstack(ms), np.hstack(rs), np.hstack(ps))


def _to_sample(cols, mode, sampler, bases):
    pts = tuple(PhasePoint(int(m), float(r), float(p))
                for m, r, p in zip(cols.m[0], cols.r[0], cols.phi[0]))
    return JointSample(pts, mode, sampler.seed, bases)


def sample_joint(table, sampler, blocks):
    """One draw ``(T^{i_1} x, ..., T^{i_p} x)`` with ``x ~ mu``."""
    cols = joint_columns(sampler, blocks, 1)
    base = PhasePoint(int(cols.m[0, 0]), float(cols.r[0, 0]), float(cols.phi[0, 0]))
    if blocks.indices[0] != 0:
        base = None
    return _to_sample(cols, "joint", sampler, (base,))


def sample_product(table, sampler, blocks):
    """One draw from ``P_{I_1} x ... x P_{I_K}``."""
    cols = product_columns(sampler, blocks, 1)
    starts = tuple(int(p) for p in blocks.boundaries[:-1])
    bases = tuple(PhasePoint(int(cols.m[0, s]), float(cols.r[0, s]), float(cols.phi[0, s]))
                  for s in starts)
    return _to_sample(cols, "product", sampler, bases)


def columns_of(sample):
    m = np.array([[p.scatterer for p in sample.points]], dtype=np.int64)
    r = np.array([[p.r for p in sample.points]])
    phi = np.array([[p.phi for p in sample.points]])
    return StateColumns(m, r, phi)


# --- generic mean estimation ----------------------------------------------------

def mean_moments(sampler, blocks, integrand, n_samples, mode, tag, shard_size=None,
                 workers=None):
    """Moments of ``integrand(columns)`` under the joint or product law.

    Shards draw from streams ``(tag, mode, shard)`` so the result depends
    only on the seed, never on the worker count.
    """
    record_len = int(blocks.indices[-1]) + 1 if mode == "joint" else max(
        int(b[-1] - b[0]) + 1 for b in blocks.blocks)
    size = _shard_size(record_len, shard_size)
    draw = joint_columns if mode == "joint" else product_columns

    def shard(index, n):
        s = sampler.spawn(tag, mode, index)
        cols = draw(s, blocks, n)
        z = np.asarray(integrand(cols), dtype=float)
        return Moments.from_samples(z.reshape(n, -1)), s.grazing_resamples

    results = run_shards(shard, n_samples, shard_size=size, workers=workers)
    return Moments.merge_all([r[0] for r in results]), sum(r[1] for r in results)


def _modulus_report(mom_j, mom_p, seeds, resamples):
    re = mom_j.mean[0] - mom_p.mean[0]
    im = mom_j.mean[1] - mom_p.mean[1]
    cov = mom_j.cov / mom_j.n + mom_p.cov / mom_p.n
    mod = float(np.hypot(re, im))
    if mod > 0:
        g = np.array([re, im]) / mod
        se = float(np.sqrt(max(g @ cov @ g, 0.0)))
    else:
        se = float(np.sqrt(np.trace(cov)))
    rep = EstimateReport(mod, se, min(mom_j.n, mom_p.n), list(seeds), int(resamples))
    rep.detail = {"re": float(re), "im": float(im),
                  "se_re": float(np.sqrt(cov[0, 0])), "se_im": float(np.sqrt(cov[1, 1]))}
    return rep


def correlation_gap(table, sampler, F, n_samples, tag="gap", shard_size=None,
                    workers=None):
    """Signed estimate of ``E_joint F - E_product F``.

    Joint and product means use independent streams; the standard error is
    the root sum of squares of the two. For complex ``F`` the value is the
    modulus of the complex difference with a first-order error.
    """
    blocks = F.blocks

    def integrand(cols):
        return eval_functional(F, cols)

    mj, gj = mean_moments(sampler, blocks, integrand, n_samples, "joint", tag,
                          shard_size, workers)
    mp, gp = mean_moments(sampler, blocks, integrand, n_samples, "product", tag,
                          shard_size, workers)
    seeds = [sampler.seed]
    if F.complex_valued:
        return _modulus_report(mj, mp, seeds, gj + gp)
    a = EstimateReport(float(mj.mean[0]), mj.std_error(0), mj.n, seeds, gj)
    b = EstimateReport(float(mp.mean[0]), mp.std_error(0), mp.n, seeds, gp)
    rep = difference(a, b, seeds, gj + gp)
    rep.detail = {"joint": a.value, "product": b.value}
    return rep


# --- exponential decay fits -------------------------------------------------------

@dataclass
class DecayFit:
    rate_hat: float
    prefactor_hat: float
    r_squared: float
    fit_range: list
    rate_ci: tuple = (np.nan, np.nan)
    threshold: float = 0.9
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return 0.0 < self.rate_hat < 1.0 and self.r_squared >= self.threshold

    @property
    def status(self):
        return "ok" if self.ok else "FitFailed"

    def as_record(self):
        return {"rate_hat": self.rate_hat, "prefactor_hat": self.prefactor_hat,
                "r_squared": self.r_squared, "fit_range": list(map(int, self.fit_range)),
                "rate_ci": [float(x) for x in self.rate_ci], "status": self.status}

    def consistent_with(self, other):
        """Whether the two rate confidence intervals overlap."""
        lo = max(self.rate_ci[0], other.rate_ci[0])
        hi = min(self.rate_ci[1], other.rate_ci[1])
        return lo <= hi


class ExponentialDecayFit(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``log|value| = log(prefactor) + gap * log(rate)``.

    Points are used only up to the first one that falls below
    ``noise_floor`` standard errors, so the fit never sees values that are
    statistically indistinguishable from zero.

    Parameters
    ----------
    noise_floor : float
        Minimum ``|value| / std_error`` for a point to enter the fit.
    min_points : int
        Fewer surviving points raise :class:`FitFailed`.
    truncate : {"prefix", "all"}
        ``"prefix"`` stops at the first point under the floor; ``"all"``
        drops such points individually.
    confidence : float
        Level of the reported rate interval.
    """

    def __init__(self, noise_floor=3.0, min_points=3, truncate="prefix", confidence=0.95,
                 threshold=0.9):
        self.noise_floor = noise_floor
        self.min_points = min_points
        self.truncate = truncate
        self.confidence = confidence
        self.threshold = threshold

    def _select(self, gaps, values, errors):
        if errors is None:
            keep = values != 0
        else:
            keep = np.abs(values) >= self.noise_floor * errors
            keep &= values != 0
        if self.truncate == "prefix":
            stop = np.flatnonzero(~keep)
            if stop.size:
                keep[stop[0]:] = False
        return keep

    def fit(self, X, y, std_errors=None):
        gaps = np.asarray(X, dtype=float).reshape(-1)
        values = np.asarray(y, dtype=float).reshape(-1)
        if gaps.shape != values.shape:
            raise ShapeMismatch("gaps and values differ in length")
        errors = None if std_errors is None else np.asarray(std_errors, dtype=float)
        keep = self._select(gaps, values, errors)
        if keep.sum() < self.min_points:
            raise FitFailed(f"only {int(keep.sum())} points above the noise floor")
        x = gaps[keep]
        logy = np.log(np.abs(values[keep]))
        design = np.column_stack([np.ones_like(x), x])
        coef, *_ = np.linalg.lstsq(design, logy, rcond=None)
        resid = logy - design @ coef
        ss_res = float(resid @ resid)
        ss_tot = float(np.sum((logy - logy.mean()) ** 2))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        dof = x.size - 2
        if dof > 0:
            s2 = ss_res / dof
            se_slope = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
            q = stats.t.ppf(0.5 + self.confidence / 2, dof)
        else:
            se_slope, q = 0.0, 0.0
        self.intercept_, self.slope_ = float(coef[0]), float(coef[1])
        self.rate_ = float(np.exp(self.slope_))
        self.prefactor_ = float(np.exp(self.intercept_))
        self.r_squared_ = float(min(1.0, max(r2, -np.inf)))
        self.rate_ci_ = (float(np.exp(self.slope_ - q * se_slope)),
                         float(np.exp(self.slope_ + q * se_slope)))
        self.fit_range_ = [float(g) for g in x]
        return self

    def predict(self, X):
        x = np.asarray(X, dtype=float).reshape(-1)
        return self.prefactor_ * self.rate_ ** x

    def score(self, X, y, sample_weight=None):
        return self.r_squared_

    def result(self):
        return DecayFit(self.rate_, self.prefactor_, self.r_squared_,
                        [int(g) if float(g).is_integer() else g for g in self.fit_range_],
                        self.rate_ci_, self.threshold)


def fit_decay(gaps, reports, threshold=0.9, **kw):
    values = [r.value for r in reports]
    errors = [r.std_error for r in reports]
    return ExponentialDecayFit(threshold=threshold, **kw).fit(gaps, values, errors).result()


def gap_decay_curve(table, sampler, F, gap_schedule=DEFAULT_GAPS, n_samples=100_000,
                    threshold=0.9, shard_size=None, workers=None):
    """Correlation gaps with all consecutive gaps set to each ``l`` in turn.

    Returns ``(curve, fit)``; ``fit`` is ``None`` when fewer than three
    points clear the noise floor.
    """
    gaps = [int(g) for g in gap_schedule]
    if any(b <= a for a, b in zip(gaps, gaps[1:])):
        raise ValueError("gap_schedule must be increasing")
    curve = []
    for g in gaps:
        Fg = F.with_blocks(F.blocks.with_gaps(g))
        curve.append((g, correlation_gap(table, sampler, Fg, n_samples, tag=("gap", g),
                                         shard_size=shard_size, workers=workers)))
    try:
        fit = fit_decay(gaps, [c[1] for c in curve], threshold)
    except FitFailed:
        fit = None
    return curve, fit


def interlaced_sums_gap(table, sampler, A1, A2, blocks, observables, n_samples,
                        shard_size=None, workers=None, tag="interlaced"):
    """Interlaced covariance of odd-block and even-block sums.

    Estimates ``Cov(A1(S1 + S3 + ...), A2(S2 + S4 + ...))`` under the joint
    law and under the full product law (where it vanishes), and returns
    their difference.
    """
    if blocks.K % 2:
        raise ValueError("interlaced sums need an even number of blocks")
    obs = list(observables) if not hasattr(observables, "func") else [observables] * blocks.size
    if len(obs) != blocks.size:
        raise ShapeMismatch(f"{len(obs)} observables for {blocks.size} indices")
    parity = np.array(blocks.block_of) % 2

    def integrand(cols):
        odd = np.zeros(cols.n)
        even = np.zeros(cols.n)
        for c, o in enumerate(obs):
            v = o(*cols.column(c))
            if parity[c] == 0:
                odd += v
            else:
                even += v
        a = np.asarray(A1(odd[:, None]), dtype=float).reshape(-1)
        b = np.asarray(A2(even[:, None]), dtype=float).reshape(-1)
        return np.column_stack([a, b, a * b])

    def cov(m):
        return delta_method(m, lambda z: z[2] - z[0] * z[1],
                            lambda z: np.array([-z[1], -z[0], 1.0]))

    mj, gj = mean_moments(sampler, blocks, integrand, n_samples, "joint", tag,
                          shard_size, workers)
    mp, gp = mean_moments(sampler, blocks, integrand, n_samples, "product", tag,
                          shard_size, workers)
    cj, sj = cov(mj)
    cp, sp = cov(mp)
    rep = EstimateReport(cj - cp, float(np.hypot(sj, sp)), min(mj.n, mp.n),
                         [sampler.seed], gj + gp)
    rep.detail = {"joint_cov": cj, "product_cov": cp}
    return rep


def n_shards(n_samples, record_len, shard_size=None):
    return len(shard_sizes(n_samples, _shard_size(record_len, shard_size)))
