"""Configured experiments with an estimator-style interface.

Every experiment is a :class:`sklearn.base.BaseEstimator`: its constructor
arguments are the configuration (so ``get_params``/``set_params`` give a
lossless round trip and reject unknown keys), and ``fit(table)`` runs it and
stores results in trailing-underscore attributes. ``curves()`` returns the
plot-ready rows and ``summary()`` the fit record with named checks.
"""

from __future__ import annotations


import numpy as np
from sklearn.base import BaseEstimator

from . import limits
from ._stats import EstimateReport
from .fidistats import DEFAULT_GAPS, IndexBlocks, gap_decay_curve, interlaced_sums_gap
from .measure import MuSampler
from .observables import FunctionalSpec, builtin, linear, outer, product_functional, tanh_sum


def _rows(curve):
    return [{"gap": x, "estimate": r.value, "std_error": r.std_error, "n": r.n_samples,
             "grazing_resamples": r.resample_count} for x, r in curve]


def _fit_record(fit):
    return None if fit is None else fit.as_record()


def _fit_ok(fit):
    return fit is not None and fit.ok


def _test_function(name, d):
    if name == "tanh_sum":
        return tanh_sum()
    if name == "linear":
        return linear(np.ones(d))
    raise KeyError(name)


def _near_zero(rep, n_se=3.0):
    return abs(rep.value) <= n_se * rep.std_error


class Experiment(BaseEstimator):
    """Shared plumbing: seeding, observables and result records."""

    command = None

    def _sampler(self, table):
        return MuSampler(table, self.seed)

    def _obs(self, table, name):
        return builtin(name, table)

    def curves(self):
        return {name: _rows(c) for name, c in self.curves_.items()}

    def summary(self):
        return {"experiment": self.command, "params": self.get_params(),
                "fits": {k: _fit_record(v) for k, v in self.fits_.items()},
                "extra": getattr(self, "extra_", {}), "checks": self.checks_,
                "passed": all(self.checks_.values())}

    @property
    def passed_(self):
        return all(self.checks_.values())


class PairCorrelation(Experiment):
    """Pair correlation ``mu(f g o T^l) - mu(f) mu(g)`` over a gap schedule."""

    command = "paircorr"

    def __init__(self, observable="sin_phi", observable2=None, gap_schedule=DEFAULT_GAPS,
                 n_samples=1_000_000, threshold=0.9, seed=0, workers=None):
        self.observable = observable
        self.observable2 = observable2
        self.gap_schedule = gap_schedule
        self.n_samples = n_samples
        self.threshold = threshold
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        g = self._obs(table, self.observable2 or self.observable)
        F = product_functional(IndexBlocks([[0], [1]]), [f, g], "pair")
        curve, fit = gap_decay_curve(table, self._sampler(table), F, self.gap_schedule,
                                     self.n_samples, self.threshold, workers=self.workers)
        self.curve_, self.fit_ = curve, fit
        self.curves_ = {"pair": curve}
        self.fits_ = {"pair": fit}
        self.checks_ = {"fit_rate_in_unit_interval_and_r2": _fit_ok(fit)}
        return self


class FunctionalGap(Experiment):
    """Correlation gap of ``A(S_1, ..., S_K)`` for equal-gap block layouts.

    ``K`` may be a list; then the fitted rates must agree across the layouts
    (overlapping confidence intervals).
    """

    command = "gap"

    def __init__(self, K=(2, 3), block_width=2, observable="cos_r", outer="tanh_chain",
                 gap_schedule=DEFAULT_GAPS, n_samples=500_000, threshold=0.9,
                 vanish_by=20, seed=0, workers=None):
        self.K = K
        self.block_width = block_width
        self.observable = observable
        self.outer = outer
        self.gap_schedule = gap_schedule
        self.n_samples = n_samples
        self.threshold = threshold
        self.vanish_by = vanish_by
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        Ks = [int(self.K)] if np.isscalar(self.K) else [int(k) for k in self.K]
        f = self._obs(table, self.observable)
        sampler = self._sampler(table)
        self.curves_, self.fits_, self.checks_ = {}, {}, {}
        for K in Ks:
            w = int(self.block_width)
            blocks = IndexBlocks([range(k * (w + 1), k * (w + 1) + w) for k in range(K)])
            F = FunctionalSpec(blocks, f, outer(self.outer, K), name=f"{self.outer}[K={K}]")
            sub = sampler.spawn("K", K)
            curve, fit = gap_decay_curve(table, sub, F, self.gap_schedule, self.n_samples,
                                         self.threshold, workers=self.workers)
            key = f"K{K}"
            self.curves_[key], self.fits_[key] = curve, fit
            late = [r for g, r in curve if g >= self.vanish_by]
            self.checks_[f"{key}_below_3se_by_gap_{self.vanish_by}"] = bool(
                late) and _near_zero(late[0])
            self.checks_[f"{key}_fit"] = _fit_ok(fit)
        fits = list(self.fits_.values())
        if len(fits) > 1:
            self.checks_["rates_agree_across_K"] = all(
                a is not None and b is not None and a.consistent_with(b)
                for a, b in zip(fits, fits[1:]))
        return self


class MultipleCorrelation(Experiment):
    """Covariance of ``f_0 ... f_r o T^-r`` and ``(g_0 ... g_k o T^k) o T^n``."""

    command = "multicorr"

    def __init__(self, r=2, k=2, f="cos_r_shifted", g=None, n_range=(1, 2, 3, 4, 5, 6, 7),
                 n_samples=1_000_000, threshold=0.9, seed=0, workers=None):
        self.r = r
        self.k = k
        self.f = f
        self.g = g
        self.n_range = n_range
        self.n_samples = n_samples
        self.threshold = threshold
        self.seed = seed
        self.workers = workers

    def _list(self, table, spec, count):
        names = [spec] * count if isinstance(spec, str) else list(spec)
        if len(names) != count:
            raise ValueError(f"need {count} observables, got {len(names)}")
        return [self._obs(table, n) for n in names]

    def fit(self, table, y=None):
        fs = self._list(table, self.f, self.r + 1)
        gs = self._list(table, self.f if self.g is None else self.g, self.k + 1)
        curve, fit = limits.multiple_correlation(table, self._sampler(table), fs, gs,
                                                 self.n_range, self.n_samples, self.threshold,
                                                 workers=self.workers)
        self.curve_, self.fit_ = curve, fit
        self.curves_ = {"multicorr": curve}
        self.fits_ = {"multicorr": fit}
        self.checks_ = {"fit_rate_in_unit_interval_and_r2": _fit_ok(fit)}
        return self


class InterlacedSums(Experiment):
    """Covariance of ``A1(S_1 + S_3 + ...)`` and ``A2(S_2 + S_4 + ...)`` over gaps."""

    command = "interlaced"

    def __init__(self, K=4, block_width=2, observable="cos_r", gap_schedule=DEFAULT_GAPS,
                 n_samples=200_000, threshold=0.85, seed=0, workers=None):
        self.K = K
        self.block_width = block_width
        self.observable = observable
        self.gap_schedule = gap_schedule
        self.n_samples = n_samples
        self.threshold = threshold
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        w = int(self.block_width)
        base = IndexBlocks([range(k * (w + 1), k * (w + 1) + w) for k in range(self.K)])
        A = outer("tanh_first")
        sampler = self._sampler(table)
        curve = [(g, interlaced_sums_gap(table, sampler, A, A, base.with_gaps(g), f,
                                         self.n_samples, workers=self.workers,
                                         tag=("interlaced", g)))
                 for g in self.gap_schedule]
        fit = limits._curve_fit(list(self.gap_schedule), curve, self.threshold)
        self.curves_ = {"interlaced": curve}
        self.fits_ = {"interlaced": fit}
        self.checks_ = {"fit_rate_in_unit_interval_and_r2": _fit_ok(fit)}
        return self


class CentralLimit(Experiment):
    """Green-Kubo variance, its direct-variance cross-check and the CLT KS test."""

    command = "clt"

    def __init__(self, observable="free_path", N=1000, compare_N=10, n_samples=10_000,
                 i_max=40, gk_samples=100_000, gk_window=64, direct_windows=100_000,
                 ks_tol=0.02, variance_tol=0.10, n_boot=200, seed=0, workers=None):
        self.observable = observable
        self.N = N
        self.compare_N = compare_N
        self.n_samples = n_samples
        self.i_max = i_max
        self.gk_samples = gk_samples
        self.gk_window = gk_window
        self.direct_windows = direct_windows
        self.ks_tol = ks_tol
        self.variance_tol = variance_tol
        self.n_boot = n_boot
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        sampler = self._sampler(table)
        gk = limits.green_kubo_sigma2(table, sampler, f, self.i_max, self.gk_samples,
                                      self.gk_window, workers=self.workers)
        self.green_kubo_ = gk
        self.checks_ = {}
        extra = {"green_kubo": gk.as_record()}
        if self.direct_windows:
            direct = limits.direct_variance(table, sampler, f, self.N, self.direct_windows,
                                            workers=self.workers)
            rel = abs(gk.sigma2 - direct.value) / gk.sigma2
            extra["direct_variance"] = direct.as_record()
            extra["variance_relative_difference"] = rel
            self.checks_["green_kubo_vs_direct_variance"] = rel <= self.variance_tol
        runs = {}
        for N in sorted({int(self.N), int(self.compare_N or self.N)}):
            cfg = limits.BirkhoffConfig(f, N, self.n_samples, self.i_max)
            runs[N] = limits.clt_experiment(table, sampler, cfg, sigma2=gk.sigma2,
                                            n_boot=self.n_boot, workers=self.workers)
        self.clt_ = runs
        main = runs[int(self.N)]
        extra["clt"] = {str(N): r.as_record() for N, r in runs.items()}
        self.checks_["ks_below_tolerance"] = main.ks_distance <= self.ks_tol
        if self.compare_N and int(self.compare_N) != int(self.N):
            small = runs[min(runs)]
            large = runs[max(runs)]
            self.checks_["ks_decreases_with_N"] = limits.ks_decreased(small, large)
        self.extra_ = extra
        lags = list(range(len(gk.autocov)))
        self.curves_ = {"autocovariance": [
            (i, EstimateReport(c, s, gk.n_samples, gk.seeds, gk.resample_count))
            for i, c, s in zip(lags, gk.autocov, gk.autocov_se)]}
        self.fits_ = {"autocovariance": gk.fit}
        return self


class SigmaExperiment(Experiment):
    """Green-Kubo covariance matrix against the empirical covariance of ``W_N``."""

    command = "sigma"

    def __init__(self, observable="vector", i_max=40, n_samples=100_000, window=64, N=1000,
                 n_windows=100_000, tol=0.10, seed=0, workers=None):
        self.observable = observable
        self.i_max = i_max
        self.n_samples = n_samples
        self.window = window
        self.N = N
        self.n_windows = n_windows
        self.tol = tol
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        sampler = self._sampler(table)
        sig = limits.sigma_matrix(table, sampler, f, self.i_max, self.n_samples, self.window,
                                  workers=self.workers)
        self.sigma_ = sig
        self.checks_ = {"symmetric": sig.asymmetry <= 1e-12,
                        "positive_semidefinite": sig.min_eigenvalue >= -1e-8}
        extra = {"sigma": sig.as_record()}
        if self.n_windows:
            cov, se = limits.empirical_window_cov(table, sampler, f, self.N, self.n_windows,
                                                  workers=self.workers)
            rel = sig.relative_distance(cov)
            self.empirical_ = cov
            extra["empirical_cov"] = cov.tolist()
            extra["empirical_cov_se"] = se.tolist()
            extra["relative_distance"] = rel
            self.checks_["matches_empirical_cov"] = rel <= self.tol
        self.extra_ = extra
        self.curves_ = {}
        self.fits_ = {}
        return self


class SteinA1(Experiment):
    command = "stein-a1"

    def __init__(self, observable="cos_r", index_tuples=((0, 0, 0, 0),),
                 k_schedule=(0, 1, 2, 3, 4, 5, 6), l_schedule=(0, 1, 2, 3, 4, 5),
                 gap_schedule=(0, 1, 2, 3, 4), l0=1, span=1, n_samples=1_000_000,
                 threshold=0.85, seed=0, workers=None):
        self.observable = observable
        self.index_tuples = index_tuples
        self.k_schedule = k_schedule
        self.l_schedule = l_schedule
        self.gap_schedule = gap_schedule
        self.l0 = l0
        self.span = span
        self.n_samples = n_samples
        self.threshold = threshold
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        rep = limits.stein_A1_check(
            table, self._sampler(table), f, [tuple(t) for t in self.index_tuples],
            self.k_schedule, self.l_schedule, self.gap_schedule, self.l0, self.span,
            self.n_samples, self.threshold, workers=self.workers)
        self.report_ = rep
        self.curves_ = {}
        for name in ("pair", "fourth", "decoupling"):
            for key, curve in getattr(rep, name).items():
                self.curves_[f"{name}_" + "".join(map(str, key))] = curve
        self.fits_ = {k.replace(":", "_").replace(" ", ""): v for k, v in rep.fits.items()}
        self.checks_ = {f"{k}_fit": _fit_ok(v) for k, v in self.fits_.items()}
        return self


class SteinA2(Experiment):
    """Second Stein condition; optionally with its two zero-expectation cases."""

    command = "stein-a2"

    def __init__(self, observable="cos_r", N=100, n=50, t=1.0, v=0.658, h="tanh_sum",
                 K_schedule=tuple(range(9)), n_samples=400_000, control_variate=True,
                 threshold=0.85, zero_cases=True, seed=0, workers=None):
        self.observable = observable
        self.N = N
        self.n = n
        self.t = t
        self.v = v
        self.h = h
        self.K_schedule = K_schedule
        self.n_samples = n_samples
        self.control_variate = control_variate
        self.threshold = threshold
        self.zero_cases = zero_cases
        self.seed = seed
        self.workers = workers

    def _spec(self, f, h=None, t=None):
        v = tuple(np.broadcast_to(np.atleast_1d(np.asarray(self.v, dtype=float)), (f.dim,)))
        return limits.SteinWindowSpec(self.n, self.N, 0, self.t if t is None else t, v,
                                      _test_function(h or self.h, f.dim))

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        sampler = self._sampler(table)
        curve, fit = limits.stein_A2_curve(table, sampler, f, self._spec(f), self.K_schedule,
                                           self.n_samples, self.threshold,
                                           self.control_variate, workers=self.workers)
        self.curves_ = {"stein_a2": curve}
        self.fits_ = {"stein_a2": fit}
        self.checks_ = {"fit_rate_in_unit_interval_and_r2": _fit_ok(fit)}
        if self.zero_cases:
            n0 = max(2, self.n_samples // 4)
            # without the control variate these are genuine Monte Carlo estimates
            for name, spec in (("linear_h", self._spec(f, h="linear")),
                               ("t_zero", self._spec(f, t=0.0))):
                c, _ = limits.stein_A2_curve(table, sampler.spawn("zero", name), f, spec,
                                             self.K_schedule[:1], n0, self.threshold,
                                             control_variate=False, workers=self.workers)
                self.curves_[name] = c
                self.checks_[f"zero_case_{name}"] = _near_zero(c[0][1])
        return self


class PeneB2(Experiment):
    command = "pene"

    def __init__(self, observable="cos_r", G="tanh_total", abc=(1, 0, 0), i=2, j=3, k=4,
                 q=0, l=0, p_schedule=(1, 2, 3, 4, 5, 6, 8), n_samples=400_000,
                 threshold=0.85, zero_cases=True, seed=0, workers=None):
        self.observable = observable
        self.G = G
        self.abc = abc
        self.i = i
        self.j = j
        self.k = k
        self.q = q
        self.l = l
        self.p_schedule = p_schedule
        self.n_samples = n_samples
        self.threshold = threshold
        self.zero_cases = zero_cases
        self.seed = seed
        self.workers = workers

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        sampler = self._sampler(table)
        spec = limits.PeneIndexSpec(self.i, self.j, self.k, self.q, self.l)
        G = limits.pene_G(self.G, f.bound)
        curve, fit = limits.pene_B2_curve(table, sampler, f, G, self.abc, spec,
                                          self.p_schedule, self.n_samples, self.threshold,
                                          workers=self.workers)
        self.curves_ = {"pene": curve}
        self.fits_ = {"pene": fit}
        self.checks_ = {"fit_rate_in_unit_interval_and_r2": _fit_ok(fit)}
        if self.zero_cases:
            c, _ = limits.pene_B2_curve(table, sampler.spawn("zero"), f,
                                        limits.pene_G("constant"), (1, 0, 0), spec,
                                        self.p_schedule[:1], max(2, self.n_samples // 4),
                                        self.threshold, workers=self.workers)
            self.curves_["constant_G"] = c
            self.checks_["zero_case_constant_G"] = _near_zero(c[0][1])
        return self


class Gouezel(Experiment):
    command = "gouezel"

    def __init__(self, observable="cos_r", boundaries=(0, 1, 2), n=1, t=(0.5, 0.5),
                 t_bound=0.6, k_schedule=(0, 1, 2, 3, 4, 6, 8), n_samples=1_000_000,
                 threshold=0.85, zero_cases=True, seed=0, workers=None):
        self.observable = observable
        self.boundaries = boundaries
        self.n = n
        self.t = t
        self.t_bound = t_bound
        self.k_schedule = k_schedule
        self.n_samples = n_samples
        self.threshold = threshold
        self.zero_cases = zero_cases
        self.seed = seed
        self.workers = workers

    def _spec(self, t):
        return limits.GouezelBlockSpec(tuple(self.boundaries), self.n, tuple(t), self.t_bound)

    def fit(self, table, y=None):
        f = self._obs(table, self.observable)
        sampler = self._sampler(table)
        curve, fit = limits.gouezel_charfn_gap(table, sampler, f, self._spec(self.t),
                                               self.k_schedule, self.n_samples,
                                               self.threshold, workers=self.workers)
        self.curves_ = {"gouezel": curve}
        self.fits_ = {"gouezel": fit}
        self.checks_ = {"fit_rate_in_unit_interval_and_r2": _fit_ok(fit)}
        if self.zero_cases:
            zero = [0.0 * np.asarray(t) for t in self.t]
            tail = list(self.t[:self.n]) + zero[self.n:]
            n0 = max(2, self.n_samples // 4)
            for name, ts in (("all_t_zero", zero), ("second_group_zero", tail)):
                c, _ = limits.gouezel_charfn_gap(table, sampler.spawn("zero", name), f,
                                                 self._spec(ts), self.k_schedule[:1], n0,
                                                 self.threshold, workers=self.workers)
                self.curves_[name] = c
                # the modulus is biased upwards; test the complex parts separately
                d = c[0][1].detail
                self.checks_[f"zero_case_{name}"] = bool(
                    abs(d["re"]) <= 3 * d["se_re"] + 1e-15
                    and abs(d["im"]) <= 3 * d["se_im"] + 1e-15)
        return self


EXPERIMENTS = {cls.command: cls for cls in (
    PairCorrelation, MultipleCorrelation, FunctionalGap, InterlacedSums, CentralLimit,
    SigmaExperiment, SteinA1, SteinA2, PeneB2, Gouezel)}
