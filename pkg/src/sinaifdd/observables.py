"""Observables, composite test functionals and smooth test functions.

Observables are vectorised: they take arrays ``m, r, phi`` of any common
shape and return an array of that shape (scalar observables) or with one
extra trailing axis of length ``dim``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import _kernels
from .exceptions import BoundViolation, ShapeMismatch, UnknownObservable


class StateColumns(NamedTuple):
    """A batch of joint samples: arrays of shape ``(n, p)``."""

    m: np.ndarray
    r: np.ndarray
    phi: np.ndarray

    @property
    def n(self):
        return self.m.shape[0]

    @property
    def width(self):
        return self.m.shape[1]

    def column(self, c):
        return self.m[:, c], self.r[:, c], self.phi[:, c]

    def columns(self, cols):
        return StateColumns(self.m[:, cols], self.r[:, cols], self.phi[:, cols])


@dataclass(frozen=True)
class Observable:
    name: str
    func: Callable
    dim: int = 1
    bound: float = 1.0
    holder: tuple | None = None
    mean_subtracted: bool = False
    mean: float | np.ndarray = 0.0
    # set when f(x) is the free flight leaving x minus this offset, so that
    # Birkhoff sums can reuse the flights of one trajectory sweep
    flight_offset: float | None = None

    def __call__(self, m, r, phi):
        return self.func(np.asarray(m), np.asarray(r, dtype=float),
                         np.asarray(phi, dtype=float))

    def eval_columns(self, states, cols=None):
        """Values at columns ``cols`` of a :class:`StateColumns` batch."""
        if cols is None:
            cols = slice(None)
        return self(states.m[:, cols], states.r[:, cols], states.phi[:, cols])

    def with_holder(self, c, theta):
        return replace(self, holder=(float(c), float(theta)))

    def centered(self, mean):
        """Copy with ``mean`` subtracted."""
        f = self.func
        mu = np.asarray(mean, dtype=float)
        offset = None if self.flight_offset is None else self.flight_offset + float(mu)
        return replace(self, func=lambda m, r, phi: f(m, r, phi) - mu, flight_offset=offset,
                       bound=self.bound + float(np.max(np.abs(mu))),
                       mean_subtracted=True, mean=0.0 * mu,
                       name=self.name if self.mean_subtracted else self.name + "~")


def _angle(table):
    rad = table.radii

    def theta(m, r):
        return r / rad[m]
    return theta


def mean_free_path(table):
    """Mean flight length under the invariant measure (Santalo's formula)."""
    area = 1.0 - sum(math.pi * s.radius ** 2 for s in table.scatterers)
    return math.pi * area / table.perimeter_total


def free_path_values(table, m, r, phi):
    rad, ptr, cj, cdx, cdy, clo, tau = table.kernel_arrays()
    shape = np.shape(m)
    mm = np.ascontiguousarray(np.ravel(m), dtype=np.int64)
    rr = np.ascontiguousarray(np.ravel(r), dtype=float)
    pp = np.ascontiguousarray(np.ravel(phi), dtype=float)
    out = _kernels.sweep(mm, rr, pp, np.array([0, 1]), False, rad, ptr, cj, cdx,
                         cdy, clo, tau, 1e-12)
    return out[3][:, 1].reshape(shape)


def builtin(name, table):
    """Catalog observables bound to ``table``.

    Every centred entry has exact mean zero under the invariant measure:
    odd in ``phi``, a full Fourier mode in ``r``, or centred by a closed
    form (free path).
    """
    theta = _angle(table)
    if name == "one":
        return Observable("one", lambda m, r, phi: np.ones(np.shape(phi)), bound=1.0,
                          holder=(0.0, 0.5))
    if name == "zero":
        return Observable("zero", lambda m, r, phi: np.zeros(np.shape(phi)), bound=0.0,
                          holder=(0.0, 0.5), mean_subtracted=True)
    if name == "phi":
        return Observable("phi", lambda m, r, phi: phi, bound=math.pi / 2,
                          mean_subtracted=True)
    if name == "sin_phi":
        return Observable("sin_phi", lambda m, r, phi: np.sin(phi), mean_subtracted=True)
    if name == "cos_r":
        return Observable("cos_r", lambda m, r, phi: np.cos(theta(m, r)),
                          mean_subtracted=True)
    if name == "sin_r":
        return Observable("sin_r", lambda m, r, phi: np.sin(theta(m, r)),
                          mean_subtracted=True)
    if name == "free_path":
        tau_bar = mean_free_path(table)
        tau_max = table.horizon_bound
        return Observable(
            "free_path",
            lambda m, r, phi: free_path_values(table, m, r, phi) - tau_bar,
            bound=max(tau_bar, tau_max - tau_bar), mean_subtracted=True,
            flight_offset=tau_bar)
    if name == "cos_r_shifted":
        return Observable("cos_r_shifted", lambda m, r, phi: 1.0 + 0.5 * np.cos(theta(m, r)),
                          bound=1.5)
    if name == "vector":
        return Observable(
            "vector",
            lambda m, r, phi: np.stack([np.sin(phi), np.cos(theta(m, r))], axis=-1),
            dim=2, bound=1.0, mean_subtracted=True, mean=np.zeros(2))
    if name == "duplicated":
        return Observable(
            "duplicated",
            lambda m, r, phi: np.stack([np.sin(phi), np.sin(phi)], axis=-1),
            dim=2, bound=1.0, mean_subtracted=True, mean=np.zeros(2))
    raise UnknownObservable(name)


BUILTIN_NAMES = ("one", "zero", "phi", "sin_phi", "cos_r", "sin_r", "free_path",
                 "cos_r_shifted", "vector", "duplicated")


def annotate(obs, table, sampler, pair_budget=20_000, n_max=30):
    """Attach an empirical dynamical-Holder annotation."""
    from .symbolic import InsufficientPairs, empirical_holder

    try:
        c, theta = empirical_holder(table, obs, pair_budget, n_max, sampler=sampler)
    except InsufficientPairs:
        return obs
    return obs.with_holder(c, theta)


# --- outer functions of block sums -------------------------------------------

@dataclass(frozen=True)
class Outer:
    """A function of the ``K`` block sums with its Lipschitz constant."""

    name: str
    func: Callable
    lipschitz: float
    bound: float | None = None
    complex_valued: bool = False

    def __call__(self, sums):
        return self.func(np.asarray(sums, dtype=float))


def outer(name, K=None, **kw):
    """Catalog of outer functions ``A``.

    ``bound`` is ``None`` for unbounded ``A``; ``lipschitz`` is the
    per-variable constant, valid on the whole real line except for
    ``product``, whose constant assumes ``|s_k| <= kw['radius']``.
    """
    if name == "first":
        return Outer("first", lambda s: s[..., 0], 1.0)
    if name == "sum":
        return Outer("sum", lambda s: s.sum(axis=-1), 1.0)
    if name == "product":
        radius = float(kw.get("radius", 1.0))
        k = K or 2
        return Outer("product", lambda s: np.prod(s, axis=-1), radius ** (k - 1),
                     radius ** k)
    if name == "tanh_chain":
        # sum_k tanh(s_k) tanh(s_{k+1}); each variable sits in at most two terms
        def chain(s):
            t = np.tanh(s)
            return np.sum(t[..., :-1] * t[..., 1:], axis=-1)
        k = K or 2
        return Outer("tanh_chain", chain, 2.0 if k > 2 else 1.0, float(k - 1))
    if name == "tanh_first":
        return Outer("tanh_first", lambda s: np.tanh(s[..., 0]), 1.0, 1.0)
    if name == "constant":
        value = float(kw.get("value", 1.0))
        return Outer("constant", lambda s: np.full(s.shape[:-1], value), 0.0, abs(value))
    if name == "expi":
        # exp(i * sum_k s_k) as a (re, im) pair
        def expi(s):
            a = s.sum(axis=-1)
            return np.stack([np.cos(a), np.sin(a)], axis=-1)
        return Outer("expi", expi, 1.0, 1.0, complex_valued=True)
    raise UnknownObservable(name)


# --- admissible functionals ---------------------------------------------------

@dataclass(frozen=True)
class FunctionalSpec:
    """``F(x_1..x_p) = A(S^(1), ..., S^(K))`` or an explicit ``F``.

    ``observables`` has one entry per index of ``blocks`` (a single
    observable is broadcast). ``explicit`` overrides the sum structure and
    receives the :class:`StateColumns` batch directly.
    """

    blocks: object
    observables: Sequence[Observable] | Observable | None = None
    outer: Outer | None = None
    explicit: Callable | None = None
    bound: float | None = None
    admissibility: tuple | None = None
    complex_valued: bool = False
    name: str = "F"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.explicit is None and (self.observables is None or self.outer is None):
            raise ValueError("need observables and an outer function, or an explicit F")
        if self.observables is not None and not isinstance(self.observables, Observable):
            if len(self.observables) != self.blocks.size:
                raise ShapeMismatch(
                    f"{len(self.observables)} observables for {self.blocks.size} indices")
        if self.outer is not None and self.outer.complex_valued:
            object.__setattr__(self, "complex_valued", True)
        if self.bound is None:
            object.__setattr__(self, "bound", self._default_bound())
        if self.admissibility is None and self.explicit is None:
            object.__setattr__(self, "admissibility", self._default_admissibility())

    def _obs_list(self):
        if isinstance(self.observables, Observable):
            return [self.observables] * self.blocks.size
        return list(self.observables)

    def _default_bound(self):
        if self.explicit is not None:
            return math.inf
        if self.outer.bound is not None:
            return float(self.outer.bound)
        total = sum(o.bound for o in self._obs_list())
        # unbounded A: |A(s)| <= L * sum |s_k| + |A(0)|
        a0 = float(np.ravel(self.outer(np.zeros((1, self.blocks.K))))[0])
        return self.outer.lipschitz * total + abs(a0)

    def _default_admissibility(self):
        hs = [o.holder for o in self._obs_list()]
        if any(h is None for h in hs):
            return None
        c = max(h[0] for h in hs)
        theta = max(h[1] for h in hs)
        return (self.outer.lipschitz * c, theta)

    def with_blocks(self, blocks):
        if blocks.size != self.blocks.size:
            raise ShapeMismatch("new blocks must have the same number of indices")
        return replace(self, blocks=blocks)


def block_sums(F, joint):
    """Block sums ``S^(k) = sum_{r in block k} f_r(x_r)``, shape ``(n, K)``."""
    blocks = F.blocks
    if joint.width != blocks.size:
        raise ShapeMismatch(f"sample has {joint.width} entries, blocks need {blocks.size}")
    obs = F._obs_list()
    sums = np.zeros((joint.n, blocks.K))
    for col, (k, o) in enumerate(zip(blocks.block_of, obs)):
        v = o(*joint.column(col))
        if np.ndim(v) > 1:
            raise ShapeMismatch("block sums need scalar observables")
        sums[:, k] += v
    return sums


def eval_functional(F, joint, check_bound=True):
    """``F`` on every joint sample; complex functionals come back as ``(n, 2)``."""
    if F.explicit is not None:
        if joint.width != F.blocks.size:
            raise ShapeMismatch(
                f"sample has {joint.width} entries, blocks need {F.blocks.size}")
        out = np.asarray(F.explicit(joint), dtype=float)
    else:
        out = np.asarray(F.outer(block_sums(F, joint)), dtype=float)
    if check_bound and F.bound is not None and math.isfinite(F.bound):
        mag = np.hypot(out[:, 0], out[:, 1]) if F.complex_valued else np.abs(out)
        if mag.size and float(mag.max()) > F.bound * (1 + 1e-12) + 1e-12:
            raise BoundViolation(
                f"|{F.name}| reached {float(mag.max()):.6g} > declared bound {F.bound}")
    return out


def product_functional(blocks, observables, name="product"):
    """``F = prod_r f_r(x_r)``; the pair-correlation integrand for singletons."""
    obs = list(observables)
    if len(obs) != blocks.size:
        raise ShapeMismatch(f"{len(obs)} observables for {blocks.size} indices")

    def F(joint):
        out = np.ones(joint.n)
        for c, o in enumerate(obs):
            out = out * o(*joint.column(c))
        return out

    bound = float(np.prod([o.bound for o in obs]))
    return FunctionalSpec(blocks, explicit=F, bound=bound, name=name)


# --- three-times differentiable test functions --------------------------------

@dataclass(frozen=True)
class TestFunctionC3:
    """``h: R^d -> R`` with closed-form derivative bounds."""

    name: str
    value: Callable
    gradient: Callable
    d1_bound: float
    d2_bound: float
    d3_bound: float

    __test__ = False

    def __call__(self, w):
        return self.value(np.asarray(w, dtype=float))


def tanh_sum():
    """``h(w) = sum_a tanh(w_a)``.

    Derivatives along each axis are ``sech^2``, ``-2 sech^2 tanh`` and
    ``4 sech^2 tanh^2 - 2 sech^4``, with suprema 1, 4/(3 sqrt 3) and 2.
    """
    def grad(w):
        return 1.0 / np.cosh(w) ** 2
    return TestFunctionC3("tanh_sum", lambda w: np.sum(np.tanh(w), axis=-1), grad,
                          1.0, 4.0 / (3.0 * math.sqrt(3.0)), 2.0)


def linear(coef):
    a = np.asarray(coef, dtype=float)
    return TestFunctionC3("linear", lambda w: w @ a,
                          lambda w: np.broadcast_to(a, np.shape(w)).copy(),
                          float(np.max(np.abs(a))), 0.0, 0.0)


def check_gradient(h, points, step=1e-5):
    """Max relative error of central differences against the analytic gradient."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for p in pts:
        g = h.gradient(p)
        for a in range(p.size):
            e = np.zeros_like(p)
            e[a] = step
            fd = (h(p + e) - h(p - e)) / (2 * step)
            worst = max(worst, abs(fd - g[a]) / max(1.0, abs(g[a])))
    return worst


def lipschitz_ratio(A, points, rng, scale=1e-3):
    """Largest per-variable difference quotient of ``A`` over sampled moves."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    worst = 0.0
    for p in pts:
        for k in range(p.size):
            q = p.copy()
            q[k] += rng.normal() * scale + rng.choice([-1, 1]) * rng.random()
            dq = abs(float(np.ravel(A(q[None]))[0]) - float(np.ravel(A(p[None]))[0]))
            worst = max(worst, dq / abs(q[k] - p[k]))
    return worst
