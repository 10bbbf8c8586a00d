"""Branching random walk simulation with thresholded extremal collection.

A tree is swept one generation at a time.  Only the current generation is
held in memory; for every particle we carry ``log V`` (its position),
``log T`` (largest displacement on its ancestral path), counts of big
displacements on the path and the index of its stopping-line ancestor.
Descendant counts of stopping-line vertices fall out of a ``bincount`` at
generation ``n``.  Positions are kept on the log scale because
sublogarithmic displacements overflow doubles.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .galton_watson import OffspringLaw
from .normalization import NormSeq
from .step import StepFunction
from .tail_model import DisplacementLaw, Regime

DEFAULT_NODE_CAP = 10**8


class PopulationCapExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class BRWConfig:
    offspring: OffspringLaw
    displacement: DisplacementLaw
    n: int
    k_min: float = -6.0
    x_min: float = -6.0
    node_cap: int = DEFAULT_NODE_CAP

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("generation n must be >= 1")

    @property
    def regime(self) -> Regime:
        return self.displacement.regime

    @property
    def m(self) -> float:
        return self.offspring.mean


@dataclass
class Scale:
    """Map from raw positions to the normalized scale of the regime."""

    regime: Regime
    b_n: float = math.nan
    a_n: float = math.nan
    level: float = math.nan       # n log m (sublog)
    line: float = math.nan        # stopping-line level, normalized
    window: float = math.nan      # collection lower edge, normalized
    tail: object = field(default=None, repr=False)

    def from_log(self, logx):
        logx = np.asarray(logx, dtype=float)
        if self.regime is Regime.SUPLOG:
            with np.errstate(over="ignore"):
                return (np.exp(logx) - self.b_n) / self.a_n
        return self.tail.L_log(logx) - self.level


@dataclass
class ExtremalSnapshot:
    n: int
    regime: Regime
    Z_n: int
    log_M: float
    log_V_atoms: np.ndarray
    log_T_atoms: np.ndarray
    line_depth: np.ndarray
    line_log_X: np.ndarray
    line_E: np.ndarray
    diagnostics: dict
    gap_max: float
    applicable: bool
    visited: int
    scale: Scale = field(repr=False, default=None)

    @property
    def survived(self) -> bool:
        return self.Z_n > 0

    @property
    def M_n(self) -> float:
        return math.exp(self.log_M) if self.Z_n > 0 else -math.inf

    @property
    def V_atoms(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_V_atoms)

    @property
    def T_atoms(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_T_atoms)

    def normalized_max(self) -> float:
        return float(self.scale.from_log(self.log_M)) if self.Z_n > 0 else -math.inf

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "regime": self.regime.value,
            "Z_n": self.Z_n,
            "log_M": self.log_M if self.Z_n > 0 else None,
            "log_V_atoms": self.log_V_atoms.tolist(),
            "log_T_atoms": self.log_T_atoms.tolist(),
            "line": [[int(d), float(x), int(e)] for d, x, e in
                     zip(self.line_depth, self.line_log_X, self.line_E)],
            "diagnostics": self.diagnostics,
            "gap_max": self.gap_max,
            "applicable": self.applicable,
            "visited": self.visited,
        }


def make_scale(config: BRWConfig, norms: NormSeq | None) -> Scale:
    law = config.displacement
    if config.regime is Regime.SUPLOG:
        if norms is None:
            raise ValueError("suplogarithmic simulation needs a NormSeq")
        return Scale(Regime.SUPLOG, b_n=norms.b_n, a_n=norms.a_n,
                     line=-norms.z_n / norms.a_n, window=config.k_min, tail=law.tail)
    level = config.n * math.log(config.m)
    return Scale(Regime.SUBLOG, level=level, line=-0.25 * level, window=config.x_min, tail=law.tail)


def _log_level(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def simulate_tree(config: BRWConfig, norms: NormSeq | None, rng: np.random.Generator) -> ExtremalSnapshot:
    """One tree, generation by generation; every snapshot field is filled."""
    law = config.displacement
    tail = law.tail
    scale = make_scale(config, norms)
    sup = config.regime is Regime.SUPLOG
    if sup:
        b, a = norms.b_n, norms.a_n
        log_line = _log_level(b - norms.z_n)
        log_y = _log_level(norms.y_n)
        log_big = min(log_line, log_y)
        log_window = _log_level(b + config.k_min * a)
    else:
        level = scale.level
        log_line = float(tail.inv_log(0.75 * level))
        log_big = log_line
        log_y = log_line
        lw = level + config.x_min
        log_window = float(tail.inv_log(lw)) if lw > 0 else -math.inf

    logV = np.array([-math.inf])
    logT = np.array([-math.inf])
    n_big = np.zeros(1, dtype=np.int16)
    n_y = np.zeros(1, dtype=np.int16)
    line_id = np.full(1, -1, dtype=np.int64)
    depths: list[np.ndarray] = []
    line_x: list[np.ndarray] = []
    n_lines = 0
    visited = 1
    z = 1
    det = config.offspring.family == "deterministic"
    d = int(config.offspring.params[0]) if det else 0

    for k in range(1, config.n + 1):
        if det:
            z = z * d
            take = lambda arr: np.repeat(arr, d)
        else:
            counts = config.offspring.sample_children(rng, z)
            parent = np.repeat(np.arange(z), counts)
            z = int(parent.size)
            take = lambda arr: arr[parent]
        visited += z
        if visited > config.node_cap:
            raise PopulationCapExceeded(f"visited nodes exceed cap {config.node_cap}")
        if z == 0:
            logV = logT = np.empty(0)
            line_id = np.empty(0, dtype=np.int64)
            n_big = n_y = np.empty(0, dtype=np.int16)
            break
        logX = law.sample_log(rng, z)
        logV = np.logaddexp(take(logV), logX)
        logT = np.maximum(take(logT), logX)
        n_big = take(n_big) + (logX >= log_big)
        n_y = take(n_y) + (logX >= log_y)
        prev = take(line_id)
        new = (logX > log_line) & (prev < 0)
        cnt = int(new.sum())
        if cnt:
            prev[new] = np.arange(n_lines, n_lines + cnt)
            n_lines += cnt
            depths.append(np.full(cnt, k, dtype=np.int64))
            line_x.append(logX[new])
        line_id = prev

    Z_n = int(logV.size)
    depth_all = np.concatenate(depths) if depths else np.empty(0, dtype=np.int64)
    x_all = np.concatenate(line_x) if line_x else np.empty(0)
    E = np.bincount(line_id[line_id >= 0], minlength=n_lines)
    keep = E > 0
    line_depth, line_log_X, line_E = depth_all[keep], x_all[keep], E[keep].astype(np.int64)

    if Z_n == 0:
        return ExtremalSnapshot(config.n, config.regime, 0, -math.inf, np.empty(0), np.empty(0),
                                line_depth, line_log_X, line_E, {}, 0.0, True, visited, scale)

    vmask = logV > log_window
    tmask = logT > log_window
    log_V_atoms = np.sort(logV[vmask])[::-1]
    log_T_atoms = np.sort(logT[tmask])[::-1]
    applicable = not bool(np.any(n_big >= 2))

    if sup:
        A1 = logT <= log_y
        A2 = n_y >= 2
        A3 = ~A1 & ~A2 & (logT <= log_line)
        rest = ~(A1 | A2 | A3)
        gap = float(np.max(np.abs(np.exp(logV[rest]) - np.exp(logT[rest])))) if rest.any() else 0.0
        diagnostics = {
            "A1_above": int(np.sum(A1 & vmask)),
            "A2_empty": not bool(A2.any()),
            "A2_count": int(A2.sum()),
            "A3_above": int(np.sum(A3 & vmask)),
            "gap_over_a": gap / norms.a_n,
            "multi_crossing": int(np.sum(n_big >= 2)),
        }
    else:
        level = scale.level
        B = tail.L_log(logT) <= 0.5 * level
        crossed = logT > log_line
        if crossed.any():
            gap = float(np.max(tail.L_log(logV[crossed]) - tail.L_log(logT[crossed])))
        else:
            gap = 0.0
        diagnostics = {
            "B_above": int(np.sum(B & vmask)),
            "B_count": int(B.sum()),
            "line_violation_empty": applicable,
            "multi_crossing": int(np.sum(n_big >= 2)),
        }
    return ExtremalSnapshot(config.n, config.regime, Z_n, float(logV.max()), log_V_atoms, log_T_atoms,
                            line_depth, line_log_X, line_E, diagnostics, gap, applicable, visited, scale)


# -- normalization of atoms ------------------------------------------------------

def normalize_atoms(values, mode: str, *, b_n=None, a_n=None, tail=None, level=None,
                    log_input: bool = False) -> np.ndarray:
    """Map atoms to the suplog, sublog or recentered scale.

    ``mode`` is ``suplog`` (``(x - b_n)/a_n``), ``sublog`` (``L(x) - level``)
    or ``recenter`` (``x - max``; empty in, empty out).
    """
    x = np.asarray(values, dtype=float)
    if mode == "recenter":
        return x - x.max() if x.size else x
    if mode == "suplog":
        raw = np.exp(x) if log_input else x
        return (raw - b_n) / a_n
    if mode == "sublog":
        lx = x if log_input else np.log(x)
        return tail.L_log(lx) - level
    raise ValueError(f"unknown normalization mode {mode!r}")


def normalize_snapshot(snapshot: ExtremalSnapshot, mode: str = "regime", which: str = "V") -> np.ndarray:
    logs = {"V": snapshot.log_V_atoms, "T": snapshot.log_T_atoms, "line": snapshot.line_log_X}[which]
    out = snapshot.scale.from_log(logs)
    if mode == "recenter":
        return normalize_atoms(out, "recenter")
    return out


# -- stopping-line identity ----------------------------------------------------------

@dataclass
class IdentityResult:
    lhs: float
    rhs: float
    applicable: bool
    reason: str = ""

    @property
    def rel_error(self) -> float:
        if not self.applicable:
            return math.nan
        denom = max(abs(self.lhs), abs(self.rhs))
        return 0.0 if denom == 0 else abs(self.lhs - self.rhs) / denom


def stopping_line_identity_check(snapshot: ExtremalSnapshot, f: StepFunction) -> IdentityResult:
    """Both sides of ``sum_x f(T(x)) = sum_v f(X_v) E(v)`` on the normalized scale."""
    if snapshot.Z_n == 0:
        return IdentityResult(0.0, 0.0, True)
    floor = max(snapshot.scale.line, snapshot.scale.window)
    if f.lower < floor:
        raise ValueError(f"f must vanish below {floor:.4g} (line level / collection window)")
    if not snapshot.applicable:
        return IdentityResult(math.nan, math.nan, False, "identity not applicable: a path crosses the line twice")
    lhs = math.fsum(f(snapshot.scale.from_log(snapshot.log_T_atoms)))
    xs = f(snapshot.scale.from_log(snapshot.line_log_X))
    rhs = math.fsum(xs * snapshot.line_E)
    return IdentityResult(lhs, rhs, True)


# -- batches --------------------------------------------------------------------------

def replicate_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Stream for replicate ``index``; independent of how replicates are scheduled."""
    ss = np.random.SeedSequence(seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class FailedReplicate:
    index: int
    error: str

    def to_json(self) -> dict:
        return {"replicate": self.index, "error": self.error}


def _run_chunk(args):
    config, norms, seed, stream, indices = args
    out = []
    for i in indices:
        try:
            out.append(simulate_tree(config, norms, replicate_rng(seed, i, stream)))
        except PopulationCapExceeded as exc:
            out.append(FailedReplicate(i, str(exc)))
    return out


def batch_simulate(config: BRWConfig, norms: NormSeq | None, R: int, seed: int,
                   parallelism: int = 1, stream: int = 0) -> tuple[list, dict]:
    """``R`` independent trees; output is identical for any ``parallelism``."""
    if R < 1:
        raise ValueError("R must be >= 1")
    indices = list(range(R))
    if parallelism <= 1:
        results = _run_chunk((config, norms, seed, stream, indices))
    else:
        chunks = [indices[j::parallelism] for j in range(parallelism)]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            parts = list(pool.map(_run_chunk, [(config, norms, seed, stream, c) for c in chunks]))
        results = [None] * R
        for c, part in zip(chunks, parts):
            for i, snap in zip(c, part):
                results[i] = snap
    return results, summarize(results)


def summarize(results: Sequence) -> dict:
    snaps = [s for s in results if isinstance(s, ExtremalSnapshot)]
    alive = [s for s in snaps if s.survived]
    maxima = np.array([s.normalized_max() for s in alive])
    q = {}
    if maxima.size:
        for p in (0.05, 0.25, 0.5, 0.75, 0.95):
            q[str(p)] = float(np.quantile(maxima, p))
    return {
        "replicates": len(results),
        "failed": len(results) - len(snaps),
        "survivors": len(alive),
        "mean_Z_n": float(np.mean([s.Z_n for s in snaps])) if snaps else math.nan,
        "normalized_max_quantiles": q,
    }
