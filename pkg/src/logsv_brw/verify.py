"""Statistical and numerical checks of simulated extremes against the limit laws."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special, stats

from .engine import BRWConfig, ExtremalSnapshot, batch_simulate, replicate_rng
from .galton_watson import OffspringLaw, compute_cluster_law, estimate_W_batch
from .limit_laws import (WRepresentation, limit_count_pmf, mixed_gumbel_cdf,
                         sample_cluster_cox_batch, w_representation)
from .normalization import DEFAULT_DELTA, DEFAULT_T, compute_norm_seq
from .tail_model import DisplacementLaw, Regime

LEVELS = (0.05, 0.01)

# stream keys keeping experiment sub-streams apart
_W_STREAM = 10**6
_COX_STREAM = 10**6 + 1


class QuadratureError(RuntimeError):
    pass


# -- Kolmogorov-Smirnov -------------------------------------------------------------------

@dataclass
class KSResult:
    n: int
    statistic: float
    bands: dict
    threshold: float
    passed: bool
    grid: np.ndarray = field(default=None, repr=False)
    empirical: np.ndarray = field(default=None, repr=False)
    reference: np.ndarray = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {"n": self.n, "statistic": self.statistic, "bands": self.bands,
                "threshold": self.threshold, "passed": self.passed}


def one_sample_band(n: int, alpha: float) -> float:
    return float(special.kolmogi(alpha)) / math.sqrt(n)


def two_sample_band(n: int, m: int, alpha: float) -> float:
    return float(special.kolmogi(alpha)) * math.sqrt((n + m) / (n * m))


def ks_statistic(sample, cdf: Callable, left_cdf: Callable | None = None,
                 threshold: float | None = None) -> KSResult:
    """Two-sided sup distance between the empirical cdf and ``cdf``.

    ``left_cdf`` gives ``F(x-)`` for laws with atoms; by default ``F`` is
    taken continuous.  The pass threshold defaults to the 1% band.
    """
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(cdf(x), dtype=float)
    Fl = F if left_cdf is None else np.asarray(left_cdf(x), dtype=float)
    right = np.searchsorted(x, x, side="right") / n
    left = np.searchsorted(x, x, side="left") / n
    stat = float(max(np.max(np.abs(right - F)), np.max(np.abs(left - Fl))))
    bands = {str(a): one_sample_band(n, a) for a in LEVELS}
    thr = bands["0.01"] if threshold is None else threshold
    return KSResult(n, stat, bands, thr, stat < thr, x, right, F)


def ks_2samp(a, b, threshold: float | None = None) -> KSResult:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    stat = float(stats.ks_2samp(a, b).statistic)
    bands = {str(al): two_sample_band(a.size, b.size, al) for al in LEVELS}
    thr = bands["0.01"] if threshold is None else threshold
    grid = np.sort(np.concatenate([a, b]))
    ea = np.searchsorted(np.sort(a), grid, side="right") / a.size
    eb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return KSResult(a.size, stat, bands, thr, stat < thr, grid, ea, eb)


def tv_distance(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_pmf(values) -> dict:
    vals, counts = np.unique(np.asarray(values, dtype=np.int64), return_counts=True)
    return {int(v): c / counts.sum() for v, c in zip(vals, counts)}


# -- simulation experiments --------------------------------------------------------------------

def _simulate(offspring, law, n, R, seed, delta, T, parallelism, window=-6.0):
    config = BRWConfig(offspring, law, n, k_min=window, x_min=window)
    norms = compute_norm_seq(law, offspring.mean, n, delta=delta, T=T) if law.regime is Regime.SUPLOG else None
    snaps, summary = batch_simulate(config, norms, R, seed, parallelism=parallelism, stream=n)
    alive = [s for s in snaps if isinstance(s, ExtremalSnapshot) and s.survived]
    if len(alive) < 100:
        raise ValueError("insufficient replication")
    return alive, summary


def _limit_w(offspring: OffspringLaw, seed: int) -> WRepresentation:
    return w_representation(offspring, replicate_rng(seed, 0, _W_STREAM)).conditioned()


@dataclass
class MaxLawReport:
    results: dict
    nonincreasing: bool
    v: float

    def to_json(self) -> dict:
        return {"v": self.v, "nonincreasing": self.nonincreasing,
                "ks": {str(n): r.to_json() for n, r in self.results.items()}}


def max_law_experiment(offspring: OffspringLaw, law: DisplacementLaw, ns: Sequence[int], R: int, seed: int,
                       threshold: float | None = None, delta: float = DEFAULT_DELTA, T: float = DEFAULT_T,
                       parallelism: int = 1) -> MaxLawReport:
    """KS distance of the normalized maximum from the mixed Gumbel law, per ``n``.

    Only surviving trees enter; the limit is conditioned on ``W > 0``.
    """
    v = compute_cluster_law(offspring).v
    w = _limit_w(offspring, seed)
    out = {}
    for n in ns:
        alive, _ = _simulate(offspring, law, n, R, seed, delta, T, parallelism)
        sample = [s.normalized_max() for s in alive]
        out[n] = ks_statistic(sample, lambda x: mixed_gumbel_cdf(x, v, w), threshold=threshold)
    stats_ = [out[n].statistic for n in ns]
    return MaxLawReport(out, bool(np.all(np.diff(stats_) <= 0)), v)


@dataclass
class PointCountReport:
    n: int
    xs: list
    tv_distinct: list
    tv_mass: list
    survivors: int
    limit_samples: int

    def to_json(self) -> dict:
        return {"n": self.n, "x": self.xs, "tv_distinct": self.tv_distinct, "tv_mass": self.tv_mass,
                "survivors": self.survivors, "limit_samples": self.limit_samples}


def point_count_experiment(offspring: OffspringLaw, law: DisplacementLaw, n: int, R: int, xs: Sequence[float],
                           seed: int, limit_samples: int = 100_000, delta: float = DEFAULT_DELTA,
                           T: float = DEFAULT_T, parallelism: int = 1) -> PointCountReport:
    """TV distances of atom counts in ``(x, inf]`` from their limits.

    Distinct clusters (stopping-line records) are compared with the exact
    count law; counts with multiplicity with Cox-process totals.
    """
    alive, _ = _simulate(offspring, law, n, R, seed, delta, T, parallelism)
    floor = max(alive[0].scale.line, alive[0].scale.window)
    if min(xs) <= floor:
        raise ValueError(f"window below threshold: x must exceed {floor:.4g}")
    cluster = compute_cluster_law(offspring)
    w = _limit_w(offspring, seed)
    cox = sample_cluster_cox_batch(cluster, offspring, min(xs), w,
                                   replicate_rng(seed, 0, _COX_STREAM), limit_samples)
    tv_d, tv_m = [], []
    for x in xs:
        distinct = [int(np.sum(s.scale.from_log(s.line_log_X) > x)) for s in alive]
        mass = [int(np.sum(s.scale.from_log(s.log_V_atoms) > x)) for s in alive]
        emp = empirical_pmf(distinct)
        kmax = max(max(emp), 10)
        while limit_count_pmf(x, kmax, cluster.v, w) > 1e-14 and kmax < 10_000:
            kmax *= 2
        lim = limit_count_pmf(x, np.arange(kmax + 1), cluster.v, w)
        lim_d = {k: float(p) for k, p in enumerate(lim)}
        tv_d.append(tv_distance(emp, lim_d))
        tv_m.append(tv_distance(empirical_pmf(mass), empirical_pmf(cox.counts_above(x, distinct=False))))
    return PointCountReport(n, list(xs), tv_d, tv_m, len(alive), limit_samples)


# -- bound checks by quadrature --------------------------------------------------------------

@dataclass
class BoundReport:
    variant: str
    grid: list
    lhs: list
    rhs: list
    slack: float
    passes: list
    params: dict

    @property
    def passed(self) -> bool:
        return all(p for p in self.passes if p is not None)

    def to_json(self) -> dict:
        return {"variant": self.variant, "grid": self.grid, "lhs": self.lhs, "rhs": self.rhs,
                "slack": self.slack, "passes": self.passes, "params": self.params, "passed": self.passed}


def _quad(func, lo, hi, what):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(func, lo, hi, limit=500, epsabs=0.0, epsrel=1e-10)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature failed for {what} on [{lo:.6g}, {hi:.6g}]: {exc}") from exc
    return val, err


def truncated_moment_excess(law: DisplacementLaw, s: float, y: float) -> float:
    """``E[e^{sX} 1{X <= y}] - 1`` computed without cancellation."""
    tail = law.tail
    a = law.a
    uy = math.log(y)
    if uy < tail.u_min:
        return -1.0      # X >= t_min > y almost surely

    def g(u):
        return math.expm1(s * math.exp(u)) * math.exp(-float(tail.L_log(u))) * float(tail.dL_log(u))

    val, _ = _quad(g, tail.u_min, uy, "truncated moment")
    return a * val + (1.0 - a) * math.expm1(s * tail.t_min) - float(law.tail_prob(y))


def window_moment(law: DisplacementLaw, s: float, lo: float, hi: float) -> float:
    """``E[e^{sX} 1{X in (lo, hi]}]``; zero on an empty window."""
    if hi <= lo:
        return 0.0
    tail = law.tail
    ulo, uhi = max(math.log(lo), tail.u_min), math.log(hi)
    ref = s * hi - float(tail.L_log(uhi))
    ref = max(ref, s * math.exp(ulo) - float(tail.L_log(ulo)))

    def g(u):
        return math.exp(s * math.exp(u) - float(tail.L_log(u)) - ref) * float(tail.dL_log(u))

    val, _ = _quad(g, ulo, uhi, "window moment")
    return law.a * val * math.exp(ref)


def lemma_bound_check(law: DisplacementLaw, gamma: float, xi: float, grid: Sequence[float],
                      variant: str = "trunk", slack: float = 2.0, y_frac: float = 0.6,
                      z_frac: float = 0.1, assess_from: float = 1e4) -> BoundReport:
    """Truncated exponential moments against their bounds with an explicit slack.

    ``trunk``: grid of ``y``; ``E[e^{sX}1{X<=y}] <= 1 + slack * L(y)^{(1-1/xi)/2}``.
    ``tree``: grid of ``x`` with ``y = y_frac x``, ``z = z_frac x``; the bound is
    ``slack * (C e^{-L(y)} e^{(s - L'(y)/3)(x-z) + y L'(y)/3} + e^{(gamma-1)L(y)})``
    with ``C = s / (s - L'(y)/3)``.  Here ``s = gamma L(y) / y`` throughout.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    tail = law.tail
    lhs, rhs, passes = [], [], []
    for g in grid:
        if variant == "trunk":
            y = float(g)
            Ly = float(tail.L(y))
            s = gamma * Ly / y
            lhs.append(1.0 + truncated_moment_excess(law, s, y))
            rhs.append(1.0 + slack * Ly ** ((1.0 - 1.0 / xi) / 2.0))
        elif variant == "tree":
            x = float(g)
            y, z = y_frac * x, z_frac * x
            if not (y > x / 2 and z <= x / 2):
                raise ValueError("tree variant needs y > x/2 and z <= x/2")
            Ly = float(tail.L(y))
            dLy = float(tail.dL(y))
            s = gamma * Ly / y
            kappa = s - dLy / 3.0
            if kappa <= 0:
                raise ValueError("explicit constant needs gamma L(y)/y > L'(y)/3")
            C = s / kappa
            lhs.append(window_moment(law, s, y, x - z))
            rhs.append(slack * (C * math.exp(-Ly + kappa * (x - z) + y * dLy / 3.0)
                                + math.exp((gamma - 1.0) * Ly)))
        else:
            raise ValueError(f"unknown variant {variant!r}")
        passes.append(bool(lhs[-1] <= rhs[-1]) if y >= assess_from else None)
    return BoundReport(variant, [float(g) for g in grid], lhs, rhs, slack, passes,
                       {"gamma": gamma, "xi": xi, "y_frac": y_frac, "z_frac": z_frac})


# -- rare events ----------------------------------------------------------------------------

def clopper_pearson_upper(k: int, N: int, level: float = 0.95) -> float:
    if k >= N:
        return 1.0
    return float(stats.beta.ppf(level, k + 1, N - k))


@dataclass
class RareEventReport:
    ns: list
    hits: list
    samples: int
    p_hat: list
    upper: list
    scaled_upper: list
    impossible: list
    log_chebyshev: list
    nonincreasing: bool
    params: dict

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("ns", "hits", "samples", "p_hat", "upper", "scaled_upper",
                                               "impossible", "log_chebyshev", "nonincreasing", "params")}


def rare_event_trend(law: DisplacementLaw, m: float, ns: Sequence[int], N: int, seed: int,
                     delta: float = DEFAULT_DELTA, T: float = DEFAULT_T, K: float = 0.0,
                     gamma: float = 0.9, chunk: int = 250_000) -> RareEventReport:
    """Monte Carlo of ``P[S_n > x_n, N_n <= y_n]`` with one-sided 95% upper bounds.

    Also reports ``log(m^n e^{-s x_n} E[e^{sX}1{X<=y_n}]^n)`` with
    ``s = gamma L(y_n)/y_n``, the exponential Chebyshev bound.
    """
    if law.regime is not Regime.SUPLOG:
        raise ValueError("rare-event trend needs a suplogarithmic law")
    hits, p_hat, upper, scaled, impossible, cheb = [], [], [], [], [], []
    for n in ns:
        ns_ = compute_norm_seq(law, m, n, delta=delta, T=T, K=K)
        x, y = ns_.x_n, ns_.y_n
        s = gamma * float(law.tail.L(y)) / y
        cheb.append(n * math.log(m) - s * x + n * math.log1p(truncated_moment_excess(law, s, y)))
        if n * y <= x:
            hits.append(0)
            p_hat.append(0.0)
            upper.append(0.0)
            scaled.append(0.0)
            impossible.append(True)
            continue
        rng = replicate_rng(seed, n)
        log_y = math.log(y)
        k = 0
        done = 0
        while done < N:
            c = min(chunk, N - done)
            lx = law.sample_log(rng, (c, n))
            ok = lx.max(axis=1) <= log_y
            if ok.any():
                k += int(np.sum(np.exp(lx[ok]).sum(axis=1) > x))
            done += c
        ub = clopper_pearson_upper(k, N)
        hits.append(k)
        p_hat.append(k / N)
        upper.append(ub)
        scaled.append(m ** n * ub)
        impossible.append(False)
    return RareEventReport(list(ns), hits, N, p_hat, upper, scaled, impossible, cheb,
                           bool(np.all(np.diff(scaled) <= 0)),
                           {"m": m, "delta": delta, "T": T, "K": K, "gamma": gamma, "seed": seed})


# -- self-similarity of W -------------------------------------------------------------------

def selfsimilarity_check(offspring: OffspringLaw, N: int, seed: int, cap: int = 100_000,
                         threshold: float | None = None) -> tuple[KSResult, np.ndarray, np.ndarray]:
    """Two-sample KS between ``W`` and ``(1/m) sum_{i <= Z_1} W_i``."""
    if N < 1000:
        raise ValueError("N must be >= 1000")
    rng = replicate_rng(seed, 0, _W_STREAM + 2)
    direct = estimate_W_batch(offspring, cap, N, rng)[0]
    z1 = offspring.sample_children(rng, N)
    pool = estimate_W_batch(offspring, cap, int(z1.sum()), rng)[0] if z1.sum() else np.empty(0)
    owner = np.repeat(np.arange(N), z1)
    composed = np.bincount(owner, weights=pool, minlength=N) / offspring.mean
    return ks_2samp(direct, composed, threshold=threshold), direct, composed
