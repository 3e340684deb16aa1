"""Limit-theorem experiments built on the correlation-gap estimator.

Each driver reduces its estimand to joint-versus-product means over
explicit index blocks, then fits an exponential decay in the relevant
gap. Variance quantities (Green-Kubo, the covariance matrix of the
normalised Birkhoff sums) are estimated from lagged products along sampled
trajectories.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from ._stats import EstimateReport, Moments, delta_method
from .exceptions import (DegenerateVariance, FitFailed, NonSummableWarning,
                         ShapeMismatch)
from .fidistats import (ExponentialDecayFit, IndexBlocks, _shard_size, correlation_gap,
                        fit_decay, mean_moments)
from .observables import (FunctionalSpec, Observable, TestFunctionC3, product_functional,
                          tanh_sum)
from .parallel import run_shards

DEGENERATE_VARIANCE = 1e-4
DEFAULT_I_MAX = 40
DEFAULT_WINDOW = 64


def _check_centered(f):
    if not f.mean_subtracted:
        raise ValueError(f"observable {f.name!r} must be centred")


def _curve_fit(xs, curve, threshold):
    try:
        return fit_decay(xs, [c[1] for c in curve], threshold)
    except FitFailed:
        return None


# --- trajectories and Birkhoff sums ----------------------------------------------

def trajectory_values(sampler, f, n, length):
    """``f(T^i x)`` for ``i < length``; shape ``(n, length)`` or ``(n, length, d)``."""
    if f.flight_offset is not None:
        o = sampler.sample_orbits(n, np.arange(length + 1))
        return o.flight[:, 1:] - f.flight_offset
    o = sampler.sample_orbits(n, np.arange(length))
    return np.asarray(f(o.m, o.r, o.phi), dtype=float)


def _as_3d(v):
    return v[:, :, None] if v.ndim == 2 else v


def birkhoff_sums(sampler, f, N, n_windows, tag="birkhoff", shard_size=None,
                  workers=None):
    """``S_N = sum_{i<N} f(T^i x)`` for ``n_windows`` independent starts.

    Returns shape ``(n_windows, d)``, concatenated in shard order.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    size = _shard_size((N + 1) * f.dim, shard_size)

    def shard(index, n):
        s = sampler.spawn(tag, N, index)
        v = _as_3d(trajectory_values(s, f, n, N))
        return v.sum(axis=1), s.grazing_resamples

    res = run_shards(shard, n_windows, shard_size=size, workers=workers)
    return np.concatenate([r[0] for r in res]), sum(r[1] for r in res)


def direct_variance(table, sampler, f, N, n_windows, tag="direct-variance",
                    shard_size=None, workers=None):
    """``Var(S_N) / N`` for a scalar observable, with a delta-method error."""
    sums, resamples = birkhoff_sums(sampler, f, N, n_windows, tag, shard_size, workers)
    s = sums[:, 0]
    mom = Moments.from_samples(np.column_stack([s, s * s]))
    value, se = delta_method(mom, lambda z: (z[1] - z[0] ** 2) / N,
                             lambda z: np.array([-2 * z[0], 1.0]) / N)
    # unbiased correction is negligible at the sample sizes used here
    return EstimateReport(value, se, mom.n, [sampler.seed], resamples,
                          {"N": N, "mean_sum": float(mom.mean[0])})


def empirical_window_cov(table, sampler, f, N, n_windows, tag="window-cov",
                         shard_size=None, workers=None):
    """Sample covariance of ``W_N = S_N / sqrt(N)`` and entrywise standard errors."""
    sums, _ = birkhoff_sums(sampler, f, N, n_windows, tag, shard_size, workers)
    w = sums / math.sqrt(N)
    w = w - w.mean(axis=0)
    prod = w[:, :, None] * w[:, None, :]
    cov = prod.mean(axis=0) * n_windows / (n_windows - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n_windows)
    return cov, se


# --- autocovariances: Green-Kubo and the Sigma matrix ----------------------------

def _lag_moments(sampler, f, i_max, n_samples, window, mode, tag, shard_size, workers):
    """Moments of ``(mean f, mean f_t (x) f_{t+i} for i = 0..i_max)``.

    Each sampled trajectory contributes the average over ``window`` origins,
    which keeps the per-sample variance low. In ``product`` mode the lagged
    factor comes from an independent trajectory, so every lag ``i >= 1``
    vanishes in expectation.
    """
    if i_max < 1:
        raise ValueError("i_max must be at least 1")
    if window < 1:
        raise ValueError("window must be at least 1")
    length = window + i_max
    size = _shard_size(length * f.dim * (i_max + 2), shard_size)

    def shard(index, n):
        s = sampler.spawn(tag, mode, index)
        v = _as_3d(trajectory_values(s, f, n, length))
        w = v if mode == "joint" else _as_3d(trajectory_values(s, f, n, length))
        x = v[:, :window]
        parts = [x.mean(axis=1)]
        for i in range(i_max + 1):
            y = (v if i == 0 else w)[:, i:i + window]
            parts.append(np.einsum("nta,ntb->nab", x, y).reshape(n, -1) / window)
        return Moments.from_samples(np.hstack(parts)), s.grazing_resamples

    res = run_shards(shard, n_samples, shard_size=size, workers=workers)
    return Moments.merge_all([r[0] for r in res]), sum(r[1] for r in res)


def _sigma_of(z, d, i_max):
    m = z[:d]
    P = z[d:].reshape(i_max + 1, d, d)
    mm = np.outer(m, m)
    S = P[0] - mm
    for i in range(1, i_max + 1):
        S = S + P[i] + P[i].T - 2 * mm
    return S


def _sigma_grad(z, d, i_max, a, b):
    g = np.zeros_like(z)
    m = z[:d]
    c = 1 + 2 * i_max
    g[a] -= c * m[b]
    g[b] -= c * m[a]
    off = d
    g[off + a * d + b] += 1.0
    for i in range(1, i_max + 1):
        base = off + i * d * d
        g[base + a * d + b] += 1.0
        g[base + b * d + a] += 1.0
    return g


def _autocov(z, d, i_max):
    m = z[:d]
    P = z[d:].reshape(i_max + 1, d, d)
    return P - np.outer(m, m)[None]


def _tail(lags, values, errors, i_max):
    """Tail of the autocovariance series from a fitted geometric envelope.

    The fitted envelope bounds ``sum_{i > i_max} |c_i|``; the variance sums
    both ``c_i`` and its transpose, hence the factor 2.
    """
    values = np.abs(np.asarray(values, dtype=float))
    if np.all(values == 0):
        return 0.0, None
    try:
        est = ExponentialDecayFit(threshold=0.0).fit(lags, values, errors)
    except FitFailed:
        return math.nan, None
    fit = est.result()
    if est.rate_ >= 1.0:
        warnings.warn(f"fitted autocovariance rate {est.rate_:.3g} >= 1; "
                      "the series may not be summable", NonSummableWarning, stacklevel=3)
        return math.inf, fit
    return 2.0 * est.prefactor_ * est.rate_ ** (i_max + 1) / (1.0 - est.rate_), fit


@dataclass
class GreenKuboResult:
    sigma2: float
    tail_bound: float
    std_error: float
    autocov: list
    autocov_se: list
    fit: object = None
    n_samples: int = 0
    window: int = DEFAULT_WINDOW
    i_max: int = DEFAULT_I_MAX
    seeds: list = field(default_factory=list)
    resample_count: int = 0

    def __iter__(self):
        yield self.sigma2
        yield self.tail_bound

    def as_record(self):
        return {"sigma2": self.sigma2, "tail_bound": self.tail_bound,
                "std_error": self.std_error, "i_max": self.i_max, "window": self.window,
                "n_samples": self.n_samples, "seeds": self.seeds,
                "resample_count": self.resample_count,
                "fit": None if self.fit is None else self.fit.as_record()}


@dataclass
class SigmaMatrix:
    matrix: np.ndarray
    i_max: int
    tail_bound: float
    std_error: np.ndarray = None
    n_samples: int = 0
    seeds: list = field(default_factory=list)

    @property
    def d(self):
        return self.matrix.shape[0]

    @property
    def asymmetry(self):
        return float(np.max(np.abs(self.matrix - self.matrix.T)))

    @property
    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.matrix).min())

    def is_valid(self, sym_tol=1e-12, psd_tol=1e-8):
        return self.asymmetry <= sym_tol and self.min_eigenvalue >= -psd_tol

    def relative_distance(self, other):
        """``max |Sigma - other|`` relative to the largest entry of ``Sigma``."""
        other = np.asarray(getattr(other, "matrix", other), dtype=float)
        return float(np.max(np.abs(self.matrix - other)) / np.max(np.abs(self.matrix)))

    def as_record(self):
        return {"matrix": self.matrix.tolist(), "i_max": self.i_max,
                "tail_bound": self.tail_bound, "asymmetry": self.asymmetry,
                "min_eigenvalue": self.min_eigenvalue,
                "std_error": None if self.std_error is None else self.std_error.tolist()}


def _sigma_estimate(sampler, f, i_max, n_samples, window, mode, tag, shard_size, workers):
    _check_centered(f)
    d = f.dim
    mom, resamples = _lag_moments(sampler, f, i_max, n_samples, window, mode, tag,
                                  shard_size, workers)
    S = _sigma_of(mom.mean, d, i_max)
    S = 0.5 * (S + S.T)
    se = np.zeros((d, d))
    for a in range(d):
        for b in range(d):
            g = _sigma_grad(mom.mean, d, i_max, a, b)
            se[a, b] = math.sqrt(max(float(g @ mom.cov @ g) / mom.n, 0.0))
    C = _autocov(mom.mean, d, i_max)
    # per-lag summary: the largest entry, with its delta-method error
    lags, vals, errs = [], [], []
    for i in range(i_max + 1):
        a, b = np.unravel_index(np.argmax(np.abs(C[i])), (d, d))
        g = np.zeros_like(mom.mean)
        g[a] -= mom.mean[b]
        g[b] -= mom.mean[a]
        g[d + i * d * d + a * d + b] += 1.0
        lags.append(i)
        vals.append(float(C[i][a, b]))
        errs.append(math.sqrt(max(float(g @ mom.cov @ g) / mom.n, 0.0)))
    tail, fit = _tail(lags, vals, errs, i_max)
    return S, se, tail, fit, vals, errs, mom.n, resamples


def green_kubo_sigma2(table, sampler, f, i_max=DEFAULT_I_MAX, n_samples=20_000,
                      window=DEFAULT_WINDOW, mode="joint", tag="green-kubo",
                      shard_size=None, workers=None):
    """Truncated Green-Kubo variance ``c_0 + 2 sum_{1 <= i <= i_max} c_i``.

    Unpacks as ``(sigma2, tail_bound)``. ``mode="product"`` replaces every
    lagged factor by an independent copy, which leaves ``Var(f)`` in
    expectation.
    """
    if f.dim != 1:
        raise ShapeMismatch("green_kubo_sigma2 needs a scalar observable")
    S, se, tail, fit, vals, errs, n, res = _sigma_estimate(
        sampler, f, i_max, n_samples, window, mode, tag, shard_size, workers)
    return GreenKuboResult(float(S[0, 0]), tail, float(se[0, 0]), vals, errs, fit, n,
                           window, i_max, [sampler.seed], res)


def sigma_matrix(table, sampler, f, i_max=DEFAULT_I_MAX, n_samples=20_000,
                 window=DEFAULT_WINDOW, tag="green-kubo", shard_size=None, workers=None):
    """``Sigma = mu(f (x) f) + sum_{n=1}^{i_max} (mu(f^n (x) f) + mu(f (x) f^n))``, symmetrised."""
    S, se, tail, fit, *_ , n, res = _sigma_estimate(
        sampler, f, i_max, n_samples, window, "joint", tag, shard_size, workers)
    return SigmaMatrix(S, i_max, tail, se, n, [sampler.seed])


# --- central limit theorem -------------------------------------------------------

@dataclass(frozen=True)
class BirkhoffConfig:
    f: Observable
    N: int
    n_samples: int
    i_max: int = DEFAULT_I_MAX

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if self.i_max < 1:
            raise ValueError("i_max must be at least 1")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")


@dataclass
class CLTResult:
    ks_distance: float
    sigma2_used: float
    ks_ci: tuple
    pvalue: float
    N: int
    n_samples: int
    bootstrap: np.ndarray = field(default=None, repr=False)

    def __iter__(self):
        yield self.ks_distance
        yield self.sigma2_used

    def as_record(self):
        return {"N": self.N, "n_samples": self.n_samples, "ks_distance": self.ks_distance,
                "ks_ci": list(self.ks_ci), "pvalue": self.pvalue,
                "sigma2_used": self.sigma2_used}


def clt_experiment(table, sampler, cfg, sigma2=None, gk_samples=20_000,
                   gk_window=DEFAULT_WINDOW, n_boot=200, confidence=0.95,
                   shard_size=None, workers=None):
    """KS distance of ``S_N / (sigma sqrt N)`` to the standard normal law.

    ``sigma2`` defaults to the Green-Kubo estimate. Unpacks as
    ``(ks_distance, sigma2_used)``; the bootstrap replicates of the KS
    statistic are kept for two-point comparisons.
    """
    f = cfg.f
    if f.dim != 1:
        raise ShapeMismatch("the CLT experiment needs a scalar observable")
    if sigma2 is None:
        sigma2 = green_kubo_sigma2(table, sampler, f, cfg.i_max, gk_samples, gk_window,
                                   shard_size=shard_size, workers=workers).sigma2
    if not sigma2 > DEGENERATE_VARIANCE:
        raise DegenerateVariance(
            f"sigma^2 = {sigma2:.3g} is below {DEGENERATE_VARIANCE}; f may be a coboundary")
    sums, _ = birkhoff_sums(sampler, f, cfg.N, cfg.n_samples, ("clt", cfg.N),
                            shard_size, workers)
    z = sums[:, 0] / math.sqrt(sigma2 * cfg.N)
    res = stats.kstest(z, "norm")
    rng = sampler.spawn("clt-bootstrap", cfg.N).rng
    boot = np.array([stats.kstest(z[rng.integers(0, z.size, z.size)], "norm").statistic
                     for _ in range(n_boot)])
    alpha = (1 - confidence) / 2
    ci = (float(np.quantile(boot, alpha)), float(np.quantile(boot, 1 - alpha)))
    return CLTResult(float(res.statistic), float(sigma2), ci, float(res.pvalue), cfg.N,
                     cfg.n_samples, boot)


def ks_decreased(small, large, confidence=0.95):
    """Whether KS at the larger ``N`` is below KS at the smaller ``N``.

    Uses the percentile interval of the difference of independent bootstrap
    replicates; the decrease counts only if the interval excludes zero.
    """
    n = min(small.bootstrap.size, large.bootstrap.size)
    diff = small.bootstrap[:n] - large.bootstrap[:n]
    lo = float(np.quantile(diff, (1 - confidence) / 2))
    return lo > 0.0 and large.ks_distance < small.ks_distance


# --- multiple correlations ---------------------------------------------------------

def multiple_correlation_blocks(r, k, n):
    return IndexBlocks([range(0, r + 1), range(n + r, n + r + k + 1)])


def multiple_correlation(table, sampler, f_list, g_list, n_range, n_samples=100_000,
                         threshold=0.9, tag="multicorr", shard_size=None, workers=None):
    """Covariance of ``f_0 f_1 o T^-1 ... f_r o T^-r`` and ``(g_0 ... g_k o T^k) o T^n``.

    Reduced to a correlation gap on ``I_1 = (0..r)``, ``I_2 = (n+r..n+r+k)``.
    Returns ``(curve, fit)`` with ``fit`` ``None`` when it fails.
    """
    f_list, g_list = list(f_list), list(g_list)
    r, k = len(f_list) - 1, len(g_list) - 1
    if r < 0 or k < 0:
        raise ValueError("need at least one f and one g")
    ns = [int(n) for n in n_range]
    if min(ns) < 1:
        raise ValueError("n must be at least 1 so that the blocks are disjoint")
    obs = f_list[::-1] + g_list
    curve = []
    for n in ns:
        F = product_functional(multiple_correlation_blocks(r, k, n), obs, "multicorr")
        curve.append((n, correlation_gap(table, sampler, F, n_samples, (tag, n),
                                         shard_size, workers)))
    return curve, _curve_fit(ns, curve, threshold)


def pair_correlation(table, sampler, f, g, gap_schedule, n_samples=100_000,
                     threshold=0.9, tag="paircorr", shard_size=None, workers=None):
    """``mu(f g o T^l) - mu(f) mu(g)`` along a gap schedule."""
    return multiple_correlation(table, sampler, [f], [g], gap_schedule, n_samples,
                                threshold, tag, shard_size, workers)


# --- Stein conditions ---------------------------------------------------------------

def _moment_product(obs_list):
    def F(cols):
        out = np.ones(cols.n)
        for c, o in enumerate(obs_list):
            out = out * o(*cols.column(c))
        return out
    return F


def _component(f, a):
    if f.dim == 1:
        return f
    return Observable(f"{f.name}[{a}]", lambda m, r, phi: f(m, r, phi)[..., a],
                      bound=f.bound, mean_subtracted=f.mean_subtracted)


def joint_moment(sampler, indices, obs_list, n_samples, tag, shard_size=None,
                 workers=None):
    """``mu(prod_c f_c o T^{i_c})`` for non-decreasing (possibly repeated) indices."""
    blocks = IndexBlocks([list(indices)], strict=False)
    mom, res = mean_moments(sampler, blocks, _moment_product(obs_list), n_samples, "joint",
                            tag, shard_size, workers)
    return EstimateReport(float(mom.mean[0]), mom.std_error(0), mom.n, [sampler.seed], res)


def decoupling_gap(table, sampler, obs4, l, m, n, n_samples, tag="decoupling",
                   shard_size=None, workers=None):
    """``mu(f_a f_b^l f_c^m f_d^n) - mu(f_a f_b^l) mu(f_c^m f_d^n)`` with ``l <= m``."""
    if not 0 <= l <= m <= n:
        raise ValueError("need 0 <= l <= m <= n")
    blocks = IndexBlocks([(0, l), (m, n)], strict=False)
    F = FunctionalSpec(blocks, explicit=_moment_product(list(obs4)),
                       bound=float(np.prod([o.bound for o in obs4])), name="decoupling")
    return correlation_gap(table, sampler, F, n_samples, tag, shard_size, workers)


@dataclass
class SteinA1Report:
    pair: dict
    fourth: dict
    decoupling: dict
    fits: dict

    def as_record(self):
        def curves(d):
            return {str(k): [(x, r.value, r.std_error) for x, r in v] for k, v in d.items()}
        return {"pair": curves(self.pair), "fourth": curves(self.fourth),
                "decoupling": curves(self.decoupling),
                "fits": {k: (None if v is None else v.as_record())
                         for k, v in self.fits.items()}}


def stein_A1_check(table, sampler, f, index_tuples=((0, 0, 0, 0),),
                   k_schedule=(0, 1, 2, 3, 4, 5, 6), l_schedule=(0, 1, 2, 3, 4, 5),
                   gap_schedule=(0, 1, 2, 3, 4), l0=1, span=1, n_samples=200_000,
                   threshold=0.85, shard_size=None, workers=None):
    """The three moment quantities of the first Stein condition.

    * ``mu(f_a f_b^k)`` along ``k_schedule``;
    * ``mu(f_a f_b^l f_c^l f_d^l)`` along ``l_schedule`` (``l = m = n``, where
      the bound reads ``theta^l``);
    * the decoupling difference at ``l = l0``, ``m = l0 + g``, ``n = m + span``
      along ``g in gap_schedule``.

    Each curve gets a decay fit keyed ``"<quantity>:<tuple>"``.
    """
    _check_centered(f)
    pair, fourth, dec, fits = {}, {}, {}, {}
    for tup in index_tuples:
        a, b, c, d = (int(x) for x in tup)
        if max(a, b, c, d) >= f.dim:
            raise ShapeMismatch(f"index tuple {tup} out of range for d = {f.dim}")
        fa, fb, fc, fd = (_component(f, x) for x in (a, b, c, d))
        key = tuple(int(x) for x in tup)
        pair[key] = [(k, joint_moment(sampler, (0, k), [fa, fb], n_samples,
                                      ("a1-pair", key, k), shard_size, workers))
                     for k in k_schedule]
        fourth[key] = [(l, joint_moment(sampler, (0, l, l, l), [fa, fb, fc, fd], n_samples,
                                        ("a1-fourth", key, l), shard_size, workers))
                       for l in l_schedule]
        dec[key] = [(g, decoupling_gap(table, sampler, (fa, fb, fc, fd), l0, l0 + g,
                                       l0 + g + span, n_samples, ("a1-decoupling", key, g),
                                       shard_size, workers))
                    for g in gap_schedule]
        for name, curve in (("pair", pair[key]), ("fourth", fourth[key]),
                            ("decoupling", dec[key])):
            fits[f"{name}:{key}"] = _curve_fit([x for x, _ in curve], curve, threshold)
    return SteinA1Report(pair, fourth, dec, fits)


@dataclass(frozen=True)
class SteinWindowSpec:
    n: int
    N: int
    K: int = 0
    t: float = 1.0
    v: tuple = (0.0,)
    h: TestFunctionC3 = field(default_factory=tanh_sum)

    def __post_init__(self):
        if not 0 <= self.n < self.N:
            raise ValueError("need 0 <= n < N")
        if not 0 <= self.K < self.N:
            raise ValueError("need 0 <= K < N")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")

    def window(self, K=None):
        K = self.K if K is None else K
        return range(max(0, self.n - K), min(self.N - 1, self.n + K) + 1)


def stein_A2_curve(table, sampler, f, spec, K_schedule=tuple(range(0, 9)),
                   n_samples=200_000, threshold=0.85, control_variate=True,
                   tag="stein-a2", shard_size=None, workers=None):
    """``mu(f^n . grad h(v + W^n_{N,K} t))`` for every ``K`` in one sweep per start.

    With ``control_variate`` the integrand is ``f^n . (grad h(v + W t) -
    grad h(v))``; the subtracted term has mean ``grad h(v) . mu(f) = 0``
    for a centred ``f``, and it removes most of the sampling noise.
    """
    Ks = [int(K) for K in K_schedule]
    if any(not 0 <= K < spec.N for K in Ks):
        raise ValueError("every K must satisfy 0 <= K < N")
    cv = control_variate and f.mean_subtracted
    N, n, t = spec.N, spec.n, float(spec.t)
    v = np.broadcast_to(np.asarray(spec.v, dtype=float), (f.dim,))
    h = spec.h
    base = np.asarray(h.gradient(v), dtype=float) if cv else 0.0
    size = _shard_size(N * f.dim * 2, shard_size)

    def shard(index, m):
        s = sampler.spawn(tag, index)
        vals = _as_3d(trajectory_values(s, f, m, N))
        prefix = np.concatenate([np.zeros((m, 1, f.dim)), np.cumsum(vals, axis=1)], axis=1)
        total = prefix[:, N]
        fn = vals[:, n]
        cols = []
        for K in Ks:
            lo, hi = max(0, n - K), min(N - 1, n + K)
            W = (total - (prefix[:, hi + 1] - prefix[:, lo])) / math.sqrt(N)
            grad = np.asarray(h.gradient(v + W * t), dtype=float)
            cols.append(np.sum(fn * (grad - base), axis=-1))
        return Moments.from_samples(np.column_stack(cols)), s.grazing_resamples

    res = run_shards(shard, n_samples, shard_size=size, workers=workers)
    mom = Moments.merge_all([r[0] for r in res])
    resamples = sum(r[1] for r in res)
    curve = [(K, EstimateReport(float(mom.mean[i]), mom.std_error(i), mom.n,
                                [sampler.seed], resamples))
             for i, K in enumerate(Ks)]
    return curve, _curve_fit(Ks, curve, threshold)


# --- Pene's condition ----------------------------------------------------------------

@dataclass(frozen=True)
class PeneG:
    """Outer function ``G(S_i, f^i, f^j, f^k)`` with sup and gradient bounds."""

    name: str
    func: Callable
    bound: float
    grad_bound: float

    def __call__(self, s, u1, u2, u3):
        return self.func(s, u1, u2, u3)


def pene_G(name, M=1.0):
    """Catalog: ``tanh_total``, ``constant`` and ``first``.

    ``first`` returns the first coordinate of ``f^i``; its bound ``M`` holds
    on the domain ``[-M, M]^d`` of that argument.
    """
    if name == "tanh_total":
        def g(s, u1, u2, u3):
            return np.tanh(0.5 * np.sum(s + u1 + u2 + u3, axis=-1))
        return PeneG(name, g, 1.0, 0.5)
    if name == "constant":
        return PeneG(name, lambda s, u1, u2, u3: np.ones(s.shape[0]), 1.0, 0.0)
    if name == "first":
        return PeneG(name, lambda s, u1, u2, u3: u1[:, 0], float(M), 1.0)
    raise KeyError(name)


@dataclass(frozen=True)
class PeneIndexSpec:
    i: int
    j: int
    k: int
    q: int = 0
    l: int = 0
    alpha: int = 0
    beta: int = 0
    gamma: int = 0

    def __post_init__(self):
        if not 0 <= self.i <= self.j <= self.k:
            raise ValueError("need 0 <= i <= j <= k")
        if not 0 <= self.q <= self.l:
            raise ValueError("need 0 <= q <= l")

    def blocks(self, p):
        if p < 1:
            raise ValueError("p must be at least 1")
        first = list(range(self.i)) + [self.i, self.j, self.k]
        k = self.k
        return IndexBlocks([first, [k + p, k + p + self.q, k + p + self.l]], strict=False)


def pene_functional(f, G, abc, spec, p):
    a, b, c = (int(x) for x in abc)
    if not 1 <= a + b + c <= 3 or min(a, b, c) < 0:
        raise ValueError("need non-negative a, b, c with 1 <= a + b + c <= 3")
    blocks = spec.blocks(p)
    i = spec.i
    powers = ((spec.alpha, a), (spec.beta, b), (spec.gamma, c))

    def F(cols):
        vals = _as_3d(np.asarray(f(cols.m, cols.r, cols.phi), dtype=float))
        S = vals[:, :i].sum(axis=1)
        out = np.asarray(G(S, vals[:, i], vals[:, i + 1], vals[:, i + 2]), dtype=float)
        for col, (coord, power) in enumerate(powers):
            if power:
                out = out * vals[:, i + 3 + col, coord] ** power
        return out

    return FunctionalSpec(blocks, explicit=F, bound=G.bound * f.bound ** (a + b + c),
                          name=f"pene[{G.name}]")


def pene_B2_curve(table, sampler, f, G, abc, index_spec, p_schedule=(1, 2, 3, 4, 5, 6, 8),
                  n_samples=200_000, threshold=0.85, tag="pene", shard_size=None,
                  workers=None):
    """``Cov[G(S_i, f^i, f^j, f^k), (f_a^{k+p})^a (f_b^{k+p+q})^b (f_c^{k+p+l})^c]`` per ``p``."""
    ps = [int(p) for p in p_schedule]
    curve = [(p, correlation_gap(table, sampler, pene_functional(f, G, abc, index_spec, p),
                                 n_samples, (tag, p), shard_size, workers))
             for p in ps]
    return curve, _curve_fit(ps, curve, threshold)


# --- Gouezel's condition -------------------------------------------------------------

@dataclass(frozen=True)
class GouezelBlockSpec:
    boundaries: tuple
    n: int
    t_vectors: tuple
    t_bound: float = 1.0

    def __post_init__(self):
        b = [int(x) for x in self.boundaries]
        if any(y <= x for x, y in zip(b, b[1:])) or b[0] < 0:
            raise ValueError("boundaries must be non-negative and strictly increasing")
        if len(self.t_vectors) != len(b) - 1:
            raise ShapeMismatch("need one frequency vector per block")
        if not 1 <= self.n < len(b) - 1:
            raise ValueError("need n >= 1 and m >= 1")
        if any(float(np.linalg.norm(np.atleast_1d(t))) >= self.t_bound
               for t in self.t_vectors):
            raise ValueError("every |t_j| must be below t_bound")

    @property
    def m(self):
        return len(self.boundaries) - 1 - self.n

    def blocks(self, k):
        b = [int(x) for x in self.boundaries]
        n = self.n
        return IndexBlocks([range(b[0], b[n]), range(b[n] + k, b[-1] + k)])

    def weights(self, d):
        b = self.boundaries
        rows = []
        for j, t in enumerate(self.t_vectors):
            t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (d,))
            rows.extend([t] * (b[j + 1] - b[j]))
        return np.array(rows)


def gouezel_functional(f, spec, k):
    blocks = spec.blocks(k)
    w = spec.weights(f.dim)

    def F(cols):
        vals = _as_3d(np.asarray(f(cols.m, cols.r, cols.phi), dtype=float))
        X = np.einsum("nca,ca->n", vals, w)
        return np.column_stack([np.cos(X), np.sin(X)])

    return FunctionalSpec(blocks, explicit=F, bound=1.0, complex_valued=True,
                          name="gouezel")


def gouezel_charfn_gap(table, sampler, f, spec, k_schedule=(0, 1, 2, 3, 4, 6, 8),
                       n_samples=200_000, threshold=0.85, tag="gouezel", shard_size=None,
                       workers=None):
    """Modulus of the characteristic-function covariance of the two block groups per ``k``."""
    ks = [int(k) for k in k_schedule]
    if min(ks) < 0:
        raise ValueError("k must be non-negative")
    curve = [(k, correlation_gap(table, sampler, gouezel_functional(f, spec, k), n_samples,
                                 (tag, k), shard_size, workers))
             for k in ks]
    return curve, _curve_fit(ks, curve, threshold)
