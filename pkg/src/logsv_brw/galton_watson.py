"""Galton-Watson ingredients: offspring laws, ``Z_l`` pmfs, the cluster law and ``W``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("deterministic", "poisson", "linear-fractional", "explicit")


@dataclass(frozen=True)
class OffspringLaw:
    """Offspring distribution of a supercritical Galton-Watson tree.

    ``params`` per family: ``deterministic`` ``(d,)``; ``poisson`` ``(lam,)``;
    ``linear-fractional`` ``(p0, p)`` with ``P[k] = (1-p0)(1-p)p^{k-1}``
    for ``k >= 1``; ``explicit`` takes ``pmf`` as ``((k, p_k), ...)``.
    """

    family: str
    params: tuple[float, ...] = ()
    pmf: tuple[tuple[int, float], ...] = ()
    _support: np.ndarray = field(default=None, repr=False, compare=False)
    _probs: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown offspring family {self.family!r}")
        if self.family == "deterministic":
            d = self.params[0]
            if d != int(d) or d < 1:
                raise ValueError("deterministic offspring needs an integer d >= 1")
        elif self.family == "poisson":
            if self.params[0] <= 0:
                raise ValueError("poisson rate must be positive")
        elif self.family == "linear-fractional":
            p0, p = self.params
            if not (0.0 <= p0 < 1.0 and 0.0 <= p < 1.0):
                raise ValueError("linear-fractional needs p0, p in [0, 1)")
        else:
            ks = np.array([k for k, _ in self.pmf], dtype=np.int64)
            ps = np.array([p for _, p in self.pmf], dtype=float)
            if ks.size == 0 or np.any(ks < 0) or np.any(ps < 0):
                raise ValueError("explicit pmf needs non-negative (k, p_k) pairs")
            if abs(ps.sum() - 1.0) > 1e-12:
                raise ValueError(f"explicit pmf sums to {ps.sum()!r}, not 1")
            if len(set(ks.tolist())) != ks.size:
                raise ValueError("explicit pmf repeats a support point")
            order = np.argsort(ks)
            object.__setattr__(self, "_support", ks[order])
            object.__setattr__(self, "_probs", ps[order])

    @property
    def mean(self) -> float:
        if self.family == "deterministic":
            return float(self.params[0])
        if self.family == "poisson":
            return float(self.params[0])
        if self.family == "linear-fractional":
            p0, p = self.params
            return (1.0 - p0) / (1.0 - p)
        return float(np.dot(self._support, self._probs))

    @property
    def is_deterministic(self) -> bool:
        return self.family == "deterministic"

    def pgf(self, s):
        """Offspring generating function; accepts complex arrays."""
        s = np.asarray(s)
        if self.family == "deterministic":
            return s ** int(self.params[0])
        if self.family == "poisson":
            return np.exp(self.params[0] * (s - 1.0))
        if self.family == "linear-fractional":
            p0, p = self.params
            return p0 + (1.0 - p0) * (1.0 - p) * s / (1.0 - p * s)
        out = np.zeros_like(s, dtype=np.result_type(s, float))
        coef = np.zeros(int(self._support[-1]) + 1)
        coef[self._support] = self._probs
        for c in coef[::-1]:
            out = out * s + c
        return out

    def pmf_array(self, kmax: int) -> np.ndarray:
        k = np.arange(kmax + 1)
        if self.family == "deterministic":
            return (k == int(self.params[0])).astype(float)
        if self.family == "poisson":
            from scipy.stats import poisson
            return poisson.pmf(k, self.params[0])
        if self.family == "linear-fractional":
            p0, p = self.params
            out = (1.0 - p0) * (1.0 - p) * p ** np.maximum(k - 1, 0).astype(float)
            out[0] = p0
            return out
        out = np.zeros(kmax + 1)
        keep = self._support <= kmax
        out[self._support[keep]] = self._probs[keep]
        return out

    def extinction_prob(self) -> float:
        """Smallest fixed point of the pgf in ``[0, 1]``."""
        q = 0.0
        for _ in range(100000):
            nq = float(self.pgf(q))
            if abs(nq - q) < 1e-17:
                return nq
            q = nq
        return q

    # -- samplers --------------------------------------------------------------

    def sample_children(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Offspring count of each of ``size`` individuals."""
        if self.family == "deterministic":
            return np.full(size, int(self.params[0]), dtype=np.int64)
        if self.family == "poisson":
            return rng.poisson(self.params[0], size).astype(np.int64)
        if self.family == "linear-fractional":
            p0, p = self.params
            alive = rng.random(size) >= p0
            return np.where(alive, rng.geometric(1.0 - p, size), 0).astype(np.int64)
        return rng.choice(self._support, size=size, p=self._probs).astype(np.int64)

    def sample_sum(self, rng: np.random.Generator, counts) -> np.ndarray:
        """Total offspring of ``counts[i]`` iid individuals, for each ``i``."""
        counts = np.asarray(counts, dtype=np.int64)
        if self.family == "deterministic":
            return counts * int(self.params[0])
        if self.family == "poisson":
            return rng.poisson(self.params[0] * counts.astype(float)).astype(np.int64)
        if self.family == "linear-fractional":
            p0, p = self.params
            parents = rng.binomial(counts, 1.0 - p0)
            if p == 0.0:
                return parents.astype(np.int64)
            extra = rng.negative_binomial(np.maximum(parents, 1), 1.0 - p)
            return (parents + np.where(parents > 0, extra, 0)).astype(np.int64)
        draws = rng.multinomial(counts, self._probs)
        return (draws @ self._support).astype(np.int64)


def deterministic(d: int = 2) -> OffspringLaw:
    return OffspringLaw("deterministic", (int(d),))


def poisson(lam: float) -> OffspringLaw:
    return OffspringLaw("poisson", (float(lam),))


def geometric(mean: float) -> OffspringLaw:
    """Geometric law on ``{0, 1, ...}`` with the given mean."""
    p = mean / (1.0 + mean)
    return OffspringLaw("linear-fractional", (1.0 - p, p))


def linear_fractional(p0: float, p: float) -> OffspringLaw:
    return OffspringLaw("linear-fractional", (float(p0), float(p)))


def explicit(pairs) -> OffspringLaw:
    return OffspringLaw("explicit", (), pmf=tuple((int(k), float(p)) for k, p in pairs))


def check_supercritical(law: OffspringLaw) -> None:
    if law.mean <= 1.0:
        raise ValueError(f"offspring law is not supercritical (m = {law.mean})")


# -- Z_l analytics ---------------------------------------------------------------

def pgf_iterate(law: OffspringLaw, s, l: int):
    """``f_l(s)``, the generating function of ``Z_l``."""
    s = np.asarray(s)
    for _ in range(l):
        s = law.pgf(s)
    return s


def survival_probs(law: OffspringLaw, lmax: int) -> np.ndarray:
    """``P[Z_l > 0]`` for ``l = 0..lmax``."""
    out = np.empty(lmax + 1)
    s = 0.0
    for l in range(lmax + 1):
        out[l] = 1.0 - s
        s = float(law.pgf(s))
    return out


class LostMassError(ValueError):
    def __init__(self, lost: float, suggested: int | None):
        hint = f"; try j_max >= {suggested}" if suggested else ""
        super().__init__(f"j_max too small: lost mass {lost:.3g} exceeds 1e-6{hint}")
        self.lost = lost
        self.suggested = suggested


def zl_pmf_head(law: OffspringLaw, l: int, j_max: int) -> np.ndarray:
    """``P[Z_l = j]`` for ``j = 0..j_max`` without any completeness requirement.

    Coefficients are read off ``f_l`` on a circle of radius ``r < 1`` by an
    inverse FFT; ``r^N = 1e-14`` bounds aliasing from ``j >= N``.
    """
    if l < 0 or j_max < 0:
        raise ValueError("need l >= 0 and j_max >= 0")
    if l == 0:
        out = np.zeros(j_max + 1)
        if j_max >= 1:
            out[1] = 1.0
        return out
    N = 1 << max(4, int(math.ceil(math.log2(8 * (j_max + 1)))))
    r = 10.0 ** (-14.0 / N)
    z = r * np.exp(2j * np.pi * np.arange(N) / N)
    vals = pgf_iterate(law, z, l)
    coef = (np.fft.fft(vals) / N).real[: j_max + 1] / r ** np.arange(j_max + 1)
    return np.clip(coef, 0.0, 1.0)


@dataclass
class ZlPmf:
    pmf: np.ndarray
    lost_mass: float


def zl_pmf(law: OffspringLaw, l: int, j_max: int, max_lost: float = 1e-6) -> ZlPmf:
    """Law of ``Z_l`` on ``{0..j_max}`` with the mass that lies beyond."""
    pmf = zl_pmf_head(law, l, j_max)
    lost = max(0.0, 1.0 - math.fsum(pmf))
    if lost > max_lost:
        suggested = None
        j = max(2 * j_max, 16)
        while j <= 1 << 22:
            if 1.0 - math.fsum(zl_pmf_head(law, l, j)) <= max_lost:
                suggested = j
                break
            j *= 2
        raise LostMassError(lost, suggested)
    return ZlPmf(pmf, lost)


# -- cluster law ----------------------------------------------------------------

@dataclass
class ClusterLaw:
    m: float
    v: float
    level_weights: np.ndarray
    survival: np.ndarray
    truncation_tail_mass: float
    tol: float

    @property
    def l_max(self) -> int:
        return len(self.level_weights) - 1


def compute_cluster_law(law: OffspringLaw, tol: float = 1e-12) -> ClusterLaw:
    """``v = sum_l m^{-l} P[Z_l > 0]`` and the level weights of the cluster law."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    check_supercritical(law)
    m = law.mean
    l_max = int(math.floor(math.log(1.0 / tol) / math.log(m))) + 1     # m^{-l_max} < tol
    l_ext = max(l_max, int(math.ceil(60.0 * math.log(2.0) / math.log(m))))
    surv = survival_probs(law, l_ext)
    terms = m ** -np.arange(l_ext + 1.0) * surv
    v = math.fsum(terms)
    weights = terms[: l_max + 1] / v
    tail = math.fsum(terms[l_max + 1:]) / v
    if tail >= 1e-10:
        raise ValueError(f"tol {tol} leaves level tail mass {tail:.3g} >= 1e-10")
    return ClusterLaw(m=m, v=v, level_weights=weights, survival=surv[: l_max + 1],
                      truncation_tail_mass=tail, tol=tol)


def cluster_pmf(cluster: ClusterLaw, law: OffspringLaw, j_max: int) -> np.ndarray:
    """``P[A = j] = v^{-1} sum_l m^{-l} P[Z_l = j]`` for ``j = 0..j_max`` (entry 0 is 0)."""
    out = np.zeros(j_max + 1)
    for l in range(cluster.l_max + 1):
        out += cluster.m ** -l * zl_pmf_head(law, l, j_max)
    out[0] = 0.0
    return out / cluster.v


def _surviving_Z(law: OffspringLaw, l: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` draws of ``Z_l`` conditioned on ``Z_l > 0`` (rejection)."""
    if l == 0:
        return np.ones(count, dtype=np.int64)
    out = []
    need = count
    while need:
        z = np.ones(need, dtype=np.int64)
        for _ in range(l):
            z = law.sample_sum(rng, z)
        z = z[z > 0]
        out.append(z)
        need -= z.size
    return np.concatenate(out)


def sample_A(cluster: ClusterLaw, law: OffspringLaw, rng: np.random.Generator, size=None,
             return_levels: bool = False):
    """Cluster multiplicities: level ``l`` w.p. ``m^{-l}P[Z_l>0]/v`` then ``Z_l | Z_l > 0``."""
    n = 1 if size is None else int(size)
    w = cluster.level_weights / cluster.level_weights.sum()
    levels = rng.choice(w.size, size=n, p=w)
    out = np.empty(n, dtype=np.int64)
    for l in np.unique(levels):
        idx = np.nonzero(levels == l)[0]
        out[idx] = _surviving_Z(law, int(l), idx.size, rng)
    if size is None:
        return (int(out[0]), int(levels[0])) if return_levels else int(out[0])
    return (out, levels) if return_levels else out


def sample_Z_path(law: OffspringLaw, n: int, rng: np.random.Generator) -> list[int]:
    if n < 0:
        raise ValueError("n must be >= 0")
    path = [1]
    z = np.array([1], dtype=np.int64)
    for _ in range(n):
        z = law.sample_sum(rng, z) if z[0] > 0 else z
        path.append(int(z[0]))
    return path


# -- martingale limit -------------------------------------------------------------

@dataclass(frozen=True)
class WEstimate:
    value: float
    freeze_generation: int
    population_at_freeze: int


def estimate_W_batch(law: OffspringLaw, cap: int, size: int, rng: np.random.Generator):
    """``m^{-k} Z_k`` at the first ``k`` with ``Z_k > cap`` or ``Z_k = 0``.

    Returns ``(values, freeze_generation, population)`` arrays.
    """
    if cap < 1000:
        raise ValueError("cap must be >= 1000")
    m = law.mean
    if law.is_deterministic:
        k = int(math.floor(math.log(cap) / math.log(m))) + 1
        pop = int(m) ** k
        return np.ones(size), np.full(size, k), np.full(size, pop, dtype=np.int64)
    z = np.ones(size, dtype=np.int64)
    k = np.zeros(size, dtype=np.int64)
    active = np.ones(size, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        z[idx] = law.sample_sum(rng, z[idx])
        k[idx] += 1
        active[idx] = (z[idx] > 0) & (z[idx] <= cap)
    return z / m ** k.astype(float), k, z


def estimate_W(law: OffspringLaw, cap: int, rng: np.random.Generator) -> WEstimate:
    val, k, z = estimate_W_batch(law, cap, 1, rng)
    return WEstimate(float(val[0]), int(k[0]), int(z[0]))
