"""Centering and scaling sequences for the suplogarithmic regime."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, asdict
from typing import Iterable

import numpy as np

from .tail_model import DisplacementLaw, Regime

DEFAULT_DELTA = 0.1
DEFAULT_T = 10.0
MAX_BISECTION = 200


@dataclass(frozen=True)
class NormSeq:
    n: int
    m: float
    b_n: float
    a_n: float
    delta: float
    T: float
    K: float
    y_n: float
    z_n: float
    x_n: float
    L_b: float

    @property
    def line_level(self) -> float:
        """Stopping-line crossing level ``b_n - z_n``."""
        return self.b_n - self.z_n

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.b_n) / self.a_n


def _log_b(law: DisplacementLaw, level: float) -> float:
    """Bisection on ``log t`` for ``inf{t : log tail(t) <= -level}``."""
    tail = law.tail
    loga = math.log(law.a)

    def excess(u):
        return loga - float(tail.L_log(u)) + level   # > 0 while tail above target

    lo = tail.u_min
    if excess(lo) <= 0.0:
        return lo
    # brackets t_min * 2^k with k doubled
    k = 1
    while excess(lo + k * math.log(2.0)) > 0.0:
        k *= 2
    hi = lo + k * math.log(2.0)
    for _ in range(MAX_BISECTION):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if excess(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def compute_norm_seq(law: DisplacementLaw, m: float, n: int, delta: float = DEFAULT_DELTA,
                     T: float = DEFAULT_T, K: float = 0.0) -> NormSeq:
    if n < 1:
        raise ValueError("generation n must be >= 1")
    if m <= 1.0:
        raise ValueError("mean offspring m must exceed 1")
    if law.regime is not Regime.SUPLOG:
        raise ValueError("normalization undefined for regime " + law.regime.value)
    if not 0.0 < delta < 1.0 or T <= 0.0:
        raise ValueError("need delta in (0, 1) and T > 0")
    u = _log_b(law, n * math.log(m))
    if u > 709.0:
        raise ValueError(f"b_n = exp({u:.1f}) exceeds the float range")
    b = math.exp(u)
    a = b / float(law.tail.dL_log(u))
    L_b = float(law.tail.L_log(u))
    z = T * b * math.log(n) / L_b if n > 1 else 0.0
    return NormSeq(n=n, m=m, b_n=b, a_n=a, delta=delta, T=T, K=K, y_n=(1.0 - delta) * b,
                   z_n=z, x_n=b + K * a, L_b=L_b)


def norm_table(law: DisplacementLaw, m: float, ns: Iterable[int], **kw) -> list[NormSeq]:
    return [compute_norm_seq(law, m, n, **kw) for n in ns]


def write_norm_csv(rows: list[NormSeq], path) -> None:
    cols = ["n", "b_n", "a_n", "y_n", "z_n", "x_n"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            d = asdict(r)
            w.writerow([d["n"]] + [repr(float(d[c])) for c in cols[1:]])


def ratio_diagnostics(rows: list[NormSeq]) -> dict:
    """Traces of ``z_n / b_n`` and ``a_n / z_n`` over a computed range.

    Each flag is true when the ratio is non-increasing along ``rows``.
    """
    zb = [r.z_n / r.b_n for r in rows]
    az = [r.a_n / r.z_n if r.z_n > 0 else math.inf for r in rows]
    return {
        "z_over_b": zb,
        "a_over_z": az,
        "z_over_b_decreasing": bool(np.all(np.diff(zb) <= 0)),
        "a_over_z_decreasing": bool(np.all(np.diff(az) <= 0)),
    }


def sublog_level(m: float, n: int, x: float = 0.0) -> float:
    """``n log m + x``, the threshold on the ``L`` scale."""
    if n < 1:
        raise ValueError("generation n must be >= 1")
    return n * math.log(m) + x


def lognormal_asymptotic_b(m: float, n: int) -> float:
    """Closed-form growth of ``b_n`` for the lognormal family."""
    y = 2.0 * n * math.log(m)
    return math.exp(math.sqrt(y - 2.0 * math.log(y)))


def lognormal_asymptotic_a(m: float, n: int, b: float) -> float:
    return b / math.sqrt(2.0 * n * math.log(m))
