"""Samplers and evaluators for the limiting objects.

The limit of the extremal process is the cluster Cox process
``V = sum_k A_k delta(l_k - log(v W))`` where ``{l_k}`` is a Poisson process
with intensity ``e^{-x} dx``, ``A_k`` are iid cluster sizes and ``W`` is the
martingale limit of the Galton-Watson tree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .galton_watson import ClusterLaw, OffspringLaw, estimate_W_batch, pgf_iterate, sample_A
from .step import StepFunction


# -- representations of W ------------------------------------------------------------

class WRepresentation:
    """Law of ``W``: sampler plus Laplace transform ``s -> E[exp(-s W)]``."""

    kind = "abstract"
    zero_mass = 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def laplace(self, s):
        raise NotImplementedError

    def conditioned(self) -> "WRepresentation":
        """Law of ``W`` given ``W > 0``."""
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantW(WRepresentation):
    value: float = 1.0
    kind = "constant"

    def sample(self, rng, size):
        return np.full(size, self.value)

    def laplace(self, s):
        return np.exp(-np.asarray(s, dtype=float) * self.value)

    def conditioned(self):
        return self


@dataclass(frozen=True)
class LinearFractionalW(WRepresentation):
    """``W = 0`` with probability ``q``, otherwise exponential with mean ``mu``."""

    q: float
    mu: float | None = None
    kind = "linear-fractional"

    @property
    def mean_positive(self) -> float:
        return self.mu if self.mu is not None else 1.0 / (1.0 - self.q)

    @property
    def zero_mass(self) -> float:
        return self.q

    def sample(self, rng, size):
        w = rng.exponential(self.mean_positive, size)
        w[rng.random(size) < self.q] = 0.0
        return w

    def laplace(self, s):
        s = np.asarray(s, dtype=float)
        return self.q + (1.0 - self.q) / (1.0 + s * self.mean_positive)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.0, self.q + (1.0 - self.q) * -np.expm1(-np.maximum(x, 0) / self.mean_positive))

    def conditioned(self):
        return LinearFractionalW(0.0, self.mean_positive)


@dataclass(frozen=True)
class EmpiricalW(WRepresentation):
    values: np.ndarray
    kind = "empirical"

    def __post_init__(self):
        if len(self.values) == 0:
            raise ValueError("empirical W sample is empty")

    @property
    def zero_mass(self) -> float:
        return float(np.mean(np.asarray(self.values) == 0))

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values, dtype=float), size=size, replace=True)

    def laplace(self, s):
        s = np.asarray(s, dtype=float)
        w = np.asarray(self.values, dtype=float)
        return np.exp(-np.multiply.outer(s, w)).mean(axis=-1)

    def conditioned(self):
        return EmpiricalW(np.asarray(self.values)[np.asarray(self.values) > 0])


def w_representation(offspring: OffspringLaw, rng: np.random.Generator | None = None,
                     size: int = 10_000, cap: int = 100_000) -> WRepresentation:
    """Exact law where one is known, otherwise a pool of ``W`` estimates."""
    if offspring.is_deterministic:
        return ConstantW(1.0)
    if offspring.family == "linear-fractional":
        return LinearFractionalW(offspring.extinction_prob())
    if rng is None:
        raise ValueError("an rng is needed to build an empirical W pool")
    return EmpiricalW(estimate_W_batch(offspring, cap, size, rng)[0])


# -- Poisson and Cox samplers ----------------------------------------------------------

def ppp_from_draws(c: float, exponentials) -> np.ndarray:
    """Points ``c + E_i`` sorted in descending order."""
    return np.sort(c + np.asarray(exponentials, dtype=float))[::-1]


def sample_exp_ppp(c: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson process with intensity ``e^{-x} dx`` on ``(c, inf)``."""
    if not math.isfinite(c):
        raise ValueError("window edge must be finite")
    k = rng.poisson(math.exp(-c))
    return ppp_from_draws(c, rng.exponential(1.0, k))


@dataclass
class CoxSample:
    W: float
    shift: float
    locations: np.ndarray
    multiplicities: np.ndarray
    c: float

    @property
    def is_null(self) -> bool:
        return self.locations.size == 0

    def count_above(self, x: float, distinct: bool = True) -> int:
        sel = self.locations > x
        return int(sel.sum()) if distinct else int(self.multiplicities[sel].sum())

    def to_json(self) -> dict:
        return {"W": self.W, "shift": self.shift if math.isfinite(self.shift) else None, "c": self.c,
                "atoms": [[float(l), int(a)] for l, a in zip(self.locations, self.multiplicities)]}


def sample_cluster_cox(cluster: ClusterLaw, offspring: OffspringLaw, c: float,
                       w_source: WRepresentation, rng: np.random.Generator) -> CoxSample:
    W = float(w_source.sample(rng, 1)[0])
    if W <= 0.0:
        return CoxSample(0.0, -math.inf, np.empty(0), np.empty(0, dtype=np.int64), c)
    shift = math.log(cluster.v * W)
    pts = sample_exp_ppp(c + shift, rng) - shift
    A = sample_A(cluster, offspring, rng, size=pts.size) if pts.size else np.empty(0, dtype=np.int64)
    return CoxSample(W, shift, pts, np.asarray(A, dtype=np.int64), c)


@dataclass
class CoxBatch:
    """Many Cox samples in flat form; atom ``j`` belongs to sample ``owner[j]``."""

    W: np.ndarray
    owner: np.ndarray
    locations: np.ndarray
    multiplicities: np.ndarray
    c: float

    @property
    def size(self) -> int:
        return self.W.size

    def counts_above(self, x: float, distinct: bool = True) -> np.ndarray:
        sel = self.locations > x
        w = None if distinct else self.multiplicities[sel]
        return np.bincount(self.owner[sel], weights=w, minlength=self.size).astype(np.int64)


def sample_cluster_cox_batch(cluster: ClusterLaw, offspring: OffspringLaw, c: float,
                             w_source: WRepresentation, rng: np.random.Generator, size: int) -> CoxBatch:
    W = w_source.sample(rng, size)
    lam = np.zeros(size)
    pos = W > 0
    lam[pos] = cluster.v * W[pos] * math.exp(-c)
    counts = rng.poisson(lam)
    owner = np.repeat(np.arange(size), counts)
    locs = c + rng.exponential(1.0, owner.size)
    A = sample_A(cluster, offspring, rng, size=owner.size) if owner.size else np.empty(0, dtype=np.int64)
    return CoxBatch(W, owner, locs, np.asarray(A, dtype=np.int64), c)


# -- evaluators ------------------------------------------------------------------------

def mixed_gumbel_cdf(x, v: float, w: WRepresentation):
    """``E[exp(-v W e^{-x})]``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore"):
        s = v * np.exp(-x)
    out = np.asarray(w.laplace(s), dtype=float)
    return float(out) if out.ndim == 0 else out


def _phi(f: StepFunction, offspring: OffspringLaw, tol: float) -> float:
    """``sum_l m^{-l} int (1 - f_l(e^{-f(x)})) e^{-x} dx`` piece by piece."""
    m = offspring.mean
    l_max = int(math.floor(math.log(1.0 / tol) / math.log(m))) + 1
    total = 0.0
    for lo, hi, theta in f.pieces():
        if theta == 0.0:
            continue
        mass = math.exp(-lo) - (math.exp(-hi) if math.isfinite(hi) else 0.0)
        s = 0.0 if math.isinf(theta) else math.exp(-theta)
        series = 0.0
        for l in range(l_max + 1):
            series += m ** (-l) * (1.0 - float(pgf_iterate(offspring, s, l)))
        total += mass * series
    return total


def limit_laplace_functional(f: StepFunction, cluster: ClusterLaw, offspring: OffspringLaw,
                             w: WRepresentation, tol: float = 1e-10) -> float:
    """``E[exp(-V(f))]`` for a non-negative step function ``f``."""
    if not math.isfinite(f.lower):
        raise ValueError("f must have support bounded below")
    return float(w.laplace(_phi(f, offspring, tol)))


def limit_count_pmf(x: float, k, v: float, w: WRepresentation):
    """Law of the number of distinct clusters in ``(x, inf]``."""
    k = np.asarray(k)
    lam = v * math.exp(-x)
    if isinstance(w, ConstantW):
        out = stats.poisson.pmf(k, lam * w.value)
    elif isinstance(w, LinearFractionalW):
        r = lam * w.mean_positive
        geo = (1.0 / (1.0 + r)) * (r / (1.0 + r)) ** k
        out = w.q * (k == 0) + (1.0 - w.q) * geo
    else:
        vals = np.asarray(w.values, dtype=float)
        out = stats.poisson.pmf(np.multiply.outer(k, np.ones_like(vals)), lam * vals).mean(axis=-1)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out
