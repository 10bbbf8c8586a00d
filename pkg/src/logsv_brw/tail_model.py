"""Displacement laws with log-slowly-varying tails.

A tail function ``L`` is handled on the log scale: every family exposes
``L`` as a function of ``u = log t`` together with its first two
derivatives in ``u`` and the inverse ``y -> log L^{-1}(y)``.  Working in
``u`` keeps sublogarithmic laws usable far beyond the float range of ``t``
itself (for ``L(t) = sqrt(log t)`` a unit exponential draw of 27 already
overflows ``t``).

The law of a displacement is ``X = L^{-1}(max(0, E + log a))`` with ``E``
unit exponential, which gives ``P[X > t] = min(1, a e^{-L(t)})`` on
``[t_min, inf)`` and an atom of mass ``1 - a`` at ``t_min`` when ``a < 1``.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import wrightomega


class Regime(str, enum.Enum):
    SUPLOG = "suplogarithmic"
    SUBLOG = "sublogarithmic"


class OutOfScopeError(ValueError):
    """Raised for tail families in the logarithmic (Frechet) regime."""


@dataclass(frozen=True)
class TailFunction:
    """``L`` with its calculus.

    ``family`` is one of ``power-log`` (``L = c (log t)^beta``),
    ``lognormal`` (``L = ((log t)^2 + 2 log log t) / 2``) or
    ``custom-table`` (monotone interpolation of ``(log t, L)`` pairs).
    """

    family: str
    params: tuple[float, ...] = ()
    xi: float = 1.0 / 3.0
    table: tuple[tuple[float, float], ...] = ()
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family == "power-log":
            c, beta = self.params
            if c <= 0 or beta <= 0:
                raise ValueError("power-log needs c > 0 and beta > 0")
        elif self.family == "lognormal":
            pass
        elif self.family == "custom-table":
            if len(self.table) < 2:
                raise ValueError("custom-table needs at least two (t, L) rows")
            ts = np.array([r[0] for r in self.table], dtype=float)
            ls = np.array([r[1] for r in self.table], dtype=float)
            if np.any(ts <= 0) or np.any(np.diff(ts) <= 0) or np.any(np.diff(ls) <= 0):
                raise ValueError("custom-table rows must be strictly increasing in t and L")
            if ls[0] != 0.0:
                raise ValueError("custom-table must start at L(t_min) = 0")
            object.__setattr__(self, "_interp", PchipInterpolator(np.log(ts), ls, extrapolate=True))
        else:
            raise ValueError(f"unknown tail family {self.family!r}")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("decrease exponent xi must lie in (0, 1)")

    # -- log-scale primitives -------------------------------------------------

    @property
    def u_min(self) -> float:
        """``log t_min``, the point where ``L`` vanishes."""
        if self.family == "power-log":
            return 0.0
        if self.family == "lognormal":
            # u^2 + 2 log u = 0
            return float(np.sqrt(wrightomega(0.0)))
        return float(np.log(self.table[0][0]))

    @property
    def t_min(self) -> float:
        return math.exp(self.u_min)

    def L_log(self, u):
        """``L(e^u)``; zero below ``u_min``."""
        u = np.asarray(u, dtype=float)
        uc = np.maximum(u, self.u_min)
        if self.family == "power-log":
            c, beta = self.params
            out = c * uc**beta
        elif self.family == "lognormal":
            with np.errstate(divide="ignore"):
                out = 0.5 * uc * uc + np.log(uc)
            out = np.maximum(out, 0.0)
        else:
            out = self._table_L(uc)
        return np.where(u <= self.u_min, 0.0, out)

    def dL_log(self, u):
        """``d/du L(e^u)``."""
        u = np.maximum(np.asarray(u, dtype=float), self.u_min)
        if self.family == "power-log":
            c, beta = self.params
            return c * beta * u ** (beta - 1.0)
        if self.family == "lognormal":
            return u + 1.0 / u
        return self._table_dL(u)

    def d2L_log(self, u):
        u = np.maximum(np.asarray(u, dtype=float), self.u_min)
        if self.family == "power-log":
            c, beta = self.params
            return c * beta * (beta - 1.0) * u ** (beta - 2.0)
        if self.family == "lognormal":
            return 1.0 - 1.0 / (u * u)
        return self._interp.derivative(2)(np.minimum(u, self._u_last)) * (u <= self._u_last)

    def inv_log(self, y):
        """``log L^{-1}(y)`` for ``y >= 0``."""
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        if self.family == "power-log":
            c, beta = self.params
            return (y / c) ** (1.0 / beta)
        if self.family == "lognormal":
            # w = u^2 solves w + log w = 2y
            out = np.sqrt(wrightomega(2.0 * y).real)
            return np.where(y == 0.0, self.u_min, out)
        return self._table_inv(y)

    # -- t-scale views --------------------------------------------------------

    def L(self, t):
        t = np.asarray(t, dtype=float)
        return self.L_log(np.log(np.maximum(t, self.t_min)))

    def dL(self, t):
        """``L'(t)``."""
        t = np.asarray(t, dtype=float)
        return self.dL_log(np.log(t)) / t

    def d2L(self, t):
        t = np.asarray(t, dtype=float)
        u = np.log(t)
        return (self.d2L_log(u) - self.dL_log(u)) / (t * t)

    def inv(self, y):
        with np.errstate(over="ignore"):
            return np.exp(self.inv_log(y))

    def decrease_onset(self, kmax: int = 4096) -> float:
        """First grid point ``t_min 2^k`` beyond which ``t^{-xi} L(t)`` never increases.

        Returned as ``log t``; ``inf`` if the grid never settles.
        """
        u = self.u_min + np.arange(1, kmax + 1) * math.log(2.0)
        g = np.log(self.L_log(u)) - self.xi * u
        rises = np.nonzero(np.diff(g) > 0)[0]
        if rises.size == 0:
            return float(u[0])
        last = rises[-1] + 1
        return float(u[last]) if last < u.size - 1 else math.inf

    # -- custom table helpers --------------------------------------------------

    @property
    def _u_last(self) -> float:
        return float(np.log(self.table[-1][0]))

    def _table_L(self, u):
        ul = self._u_last
        lin = self._interp(ul) + self._interp.derivative(1)(ul) * (u - ul)
        return np.where(u <= ul, self._interp(np.minimum(u, ul)), lin)

    def _table_dL(self, u):
        ul = self._u_last
        return np.where(u <= ul, self._interp.derivative(1)(np.minimum(u, ul)),
                        self._interp.derivative(1)(ul))

    def _table_inv(self, y):
        flat = np.atleast_1d(y).astype(float)
        out = np.empty_like(flat)
        lo = self.u_min
        for i, yi in enumerate(flat):
            if yi <= 0.0:
                out[i] = lo
                continue
            hi = lo + 1.0
            while float(self._table_L(hi)) < yi:
                hi = lo + 2.0 * (hi - lo)
            out[i] = brentq(lambda s: float(self._table_L(s)) - yi, lo, hi, xtol=1e-14, rtol=1e-15)
        return out.reshape(np.shape(y)) if np.ndim(y) else float(out[0])


def power_log(c: float, beta: float, xi: float = 1.0 / 3.0) -> TailFunction:
    return TailFunction("power-log", (float(c), float(beta)), xi=xi)


def lognormal_tail(xi: float = 1.0 / 3.0) -> TailFunction:
    return TailFunction("lognormal", (), xi=xi)


def load_table(path) -> TailFunction:
    """Read a ``t,L`` CSV (header optional) into a custom-table tail."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                continue
    return TailFunction("custom-table", (), table=tuple(rows))


def _classify(tail: TailFunction) -> Regime:
    if tail.family == "power-log":
        beta = tail.params[1]
        if beta == 1.0:
            raise OutOfScopeError("logarithmic regime out of scope")
        return Regime.SUPLOG if beta > 1.0 else Regime.SUBLOG
    if tail.family == "lognormal":
        return Regime.SUPLOG
    u = np.array([50.0, 100.0])
    ratio = tail.L_log(u) / u
    return Regime.SUPLOG if ratio[1] > ratio[0] else Regime.SUBLOG


@dataclass(frozen=True)
class DisplacementLaw:
    """Tail, constant prefactor ``a`` and the declared regime.

    ``left_tail_exponent`` only documents the left-tail condition; the
    support is ``[t_min, inf)`` so it holds trivially.
    """

    tail: TailFunction
    a: float = 1.0
    regime: Regime | None = None
    left_tail_exponent: float = 1.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("prefactor a must be positive")
        found = _classify(self.tail)
        declared = found if self.regime is None else Regime(self.regime)
        if declared is not found:
            raise ValueError(f"regime mismatch: {self.tail.family} tail is {found.value}")
        object.__setattr__(self, "regime", declared)
        if declared is Regime.SUBLOG and self.a != 1.0:
            raise ValueError("sublogarithmic laws require a = 1")

    @property
    def t_min(self) -> float:
        return self.tail.t_min

    @property
    def t_star(self) -> float:
        """Point where ``a e^{-L}`` crosses 1 (``t_min`` when ``a <= 1``)."""
        return float(self.tail.inv(max(0.0, math.log(self.a))))

    def tail_prob(self, t):
        t = np.asarray(t, dtype=float)
        p = np.minimum(1.0, self.a * np.exp(-self.tail.L(np.maximum(t, self.t_min))))
        out = np.where(t < self.t_min, 1.0, p)
        return float(out) if out.ndim == 0 else out

    def log_quantile(self, p):
        """``log`` of :meth:`quantile`; finite even when the quantile overflows."""
        p = np.asarray(p, dtype=float)
        if np.any(p <= 0.0):
            raise ValueError("unbounded quantile")
        if np.any(p > 1.0):
            raise ValueError("probability must lie in (0, 1]")
        out = self.tail.inv_log(np.maximum(0.0, math.log(self.a) - np.log(p)))
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, p):
        """``inf{t : tail_prob(t) <= p}``, clipped to the support."""
        lq = self.log_quantile(p)
        with np.errstate(over="ignore"):
            return float(np.exp(lq)) if np.ndim(lq) == 0 else np.exp(lq)

    def sample_log(self, rng: np.random.Generator, size=None):
        """``log X`` for ``size`` iid displacements."""
        return self.from_exponential_log(rng.standard_exponential(size))

    def sample(self, rng: np.random.Generator, size=None):
        with np.errstate(over="ignore"):
            return np.exp(self.sample_log(rng, size))

    def from_exponential_log(self, e):
        """Deterministic map from unit-exponential draws to ``log X``."""
        return self.tail.inv_log(np.maximum(0.0, np.asarray(e, dtype=float) + math.log(self.a)))

    def L_of_log(self, logx):
        return self.tail.L_log(logx)


def sample_displacement(law: DisplacementLaw, rng: np.random.Generator) -> float:
    return float(law.sample(rng))


# -- assumption checks ---------------------------------------------------------

@dataclass
class Check:
    name: str
    status: str
    trace: list[float]
    note: str = ""


@dataclass
class ValidationReport:
    regime: Regime
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def status(self, name: str) -> str:
        return next(c.status for c in self.checks if c.name == name)


def _monotone(seq: np.ndarray, increasing: bool, tail_frac: float = 1.0) -> bool:
    start = int(len(seq) * (1.0 - tail_frac))
    d = np.diff(seq[start:])
    return bool(np.all(d >= 0) if increasing else np.all(d <= 0))


def validate_assumptions(law: DisplacementLaw, grid: Sequence[float] | None = None) -> ValidationReport:
    """Evaluate the regime assumptions on a geometric grid of ``t``."""
    tail = law.tail
    if tail.family == "power-log" and tail.params[1] == 1.0:
        raise OutOfScopeError("logarithmic regime out of scope")
    if grid is None:
        grid = np.logspace(2, 12, 11)
    u = np.log(np.asarray(grid, dtype=float))
    L = tail.L_log(u)
    Lp = tail.dL_log(u)
    checks = []

    if law.regime is Regime.SUPLOG:
        t = np.exp(u)
        dL = Lp / t
        d2L = (tail.d2L_log(u) - Lp) / (t * t)
        ratio = np.abs(d2L / (dL * dL))
        checks.append(Check("L''/L'^2 -> 0", "pass" if _monotone(ratio, False) and ratio[-1] < ratio[0] else "fail",
                            ratio.tolist()))
        with np.errstate(invalid="ignore", divide="ignore"):
            ll = np.log(np.log(L))
            growth = L / (Lp * np.sqrt(ll))
        ok = np.all(np.isfinite(growth)) and _monotone(growth, True)
        checks.append(Check("L/(xL' sqrt(loglog L)) -> inf", "pass" if ok else "warn", growth.tolist(),
                            "reported as a warning only"))
        g = np.log(L) - u / 3.0
        checks.append(Check("x^{-1/3} L(x) eventually decreasing",
                            "pass" if _monotone(g, False, tail_frac=0.5) else "fail", np.exp(g).tolist()))
        r = u / L
        checks.append(Check("log t / L(t) -> 0", "pass" if _monotone(r, False) and r[-1] < r[0] else "fail",
                            r.tolist()))
    else:
        sv = np.abs(tail.L_log(u + math.log(2.0)) / L - 1.0)
        checks.append(Check("L(2t)/L(t) -> 1", "pass" if _monotone(sv, False) and sv[-1] < sv[0] else "fail",
                            sv.tolist()))
        r = L / u
        checks.append(Check("L(t)/log t -> 0", "pass" if _monotone(r, False) and r[-1] < r[0] else "fail",
                            r.tolist()))
    return ValidationReport(law.regime, checks)
