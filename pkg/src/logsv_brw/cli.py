"""Experiment runner: ``logsv-brw <kind> --config run.ini --seed 7 --out dir``.

Configs are INI files with flat sections ``experiment``, ``offspring``,
``displacement``, ``normalization``, ``window`` and ``verify``.  Every
artifact is listed with its sha256 in ``manifest.txt``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import sys
import traceback
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import galton_watson as gw
from .engine import (BRWConfig, ExtremalSnapshot, PopulationCapExceeded, batch_simulate, replicate_rng,
                     stopping_line_identity_check)
from .limit_laws import (limit_count_pmf, mixed_gumbel_cdf, sample_cluster_cox, w_representation)
from .normalization import compute_norm_seq, ratio_diagnostics, sublog_level
from .step import StepFunction
from .tail_model import DisplacementLaw, OutOfScopeError, Regime, load_table, lognormal_tail, power_log
from .verify import (ks_statistic, lemma_bound_check, max_law_experiment, point_count_experiment,
                     rare_event_trend, selfsimilarity_check, tv_distance, empirical_pmf)

log = logging.getLogger("logsv_brw")

KINDS = ("normalize", "simulate", "limit-sample", "verify-max", "verify-pp",
         "verify-lemmas", "verify-gw", "report")

E_UNKNOWN_FAMILY = "E101"
E_REGIME_MISMATCH = "E102"
E_SEED_REQUIRED = "E103"
E_UNKNOWN_KIND = "E104"
E_BAD_VALUE = "E105"
E_OUT_OF_SCOPE = "E106"

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

DEFAULTS = {
    "experiment": {"n": "12", "R": "200", "threads": "1", "out": "out", "node_cap": "100000000"},
    "offspring": {"family": "deterministic", "d": "2"},
    "displacement": {"family": "power-log", "c": "1.0", "beta": "0.5", "a": "1.0", "xi": str(1.0 / 3.0)},
    "normalization": {"delta": "0.1", "T": "10.0", "K": "0.0"},
    "window": {"k_min": "-6.0", "x_min": "-6.0"},
    "verify": {"x_grid": "-1,0,1", "limit_samples": "100000", "tv_distinct": "0.05", "tv_mass": "0.07",
               "gamma": "0.5", "trunk_grid": "1e4,1e6,1e8,1e10", "tree_grid": "1e6,1e8,1e10,1e12",
               "rare_ns": "4,6,8", "rare_samples": "1000000", "gw_samples": "100000",
               "w_samples": "10000", "w_cap": "100000"},
}


class ConfigError(ValueError):
    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        super().__init__("; ".join(f"[{c}] {m}" for c, m in violations))

    @property
    def codes(self) -> list[str]:
        return [c for c, _ in self.violations]


@dataclass
class ExperimentConfig:
    kind: str
    offspring: gw.OffspringLaw
    displacement: DisplacementLaw
    n: int
    ns: list
    R: int
    delta: float
    T: float
    K: float
    k_min: float
    x_min: float
    seed: int
    out: Path
    threads: int
    node_cap: int
    verify: dict = field(default_factory=dict)
    echo: dict = field(default_factory=dict)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(float(t)) for t in text.split(",") if t.strip()]


def _build_offspring(sec) -> gw.OffspringLaw:
    fam = sec.get("family", "deterministic")
    if fam == "deterministic":
        return gw.deterministic(int(sec.get("d", "2")))
    if fam == "poisson":
        return gw.poisson(float(sec.get("lam", "2")))
    if fam == "geometric":
        return gw.geometric(float(sec.get("mean", "2")))
    if fam == "linear-fractional":
        return gw.linear_fractional(float(sec["p0"]), float(sec["p"]))
    if fam == "explicit":
        pairs = [tuple(item.split(":")) for item in sec["pmf"].split(",")]
        return gw.explicit([(int(k), float(p)) for k, p in pairs])
    raise KeyError(fam)


def _build_tail(sec):
    fam = sec.get("family", "power-log")
    xi = float(sec.get("xi", str(1.0 / 3.0)))
    if fam == "power-log":
        return power_log(float(sec.get("c", "1")), float(sec.get("beta", "0.5")), xi)
    if fam == "lognormal":
        return lognormal_tail(xi)
    if fam == "custom-table":
        return load_table(sec["table"])
    raise KeyError(fam)


def _apply_overrides(cp: configparser.ConfigParser, overrides) -> list[tuple[str, str]]:
    bad = []
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            bad.append((E_BAD_VALUE, f"override {item!r} is not section.key=value"))
            continue
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, name, value)
    return bad


def parse_config(path=None, overrides=None, kind: str | None = None, seed: int | None = None) -> ExperimentConfig:
    """Validated config; raises :class:`ConfigError` listing every violation."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        if not Path(path).exists():
            raise ConfigError([(E_BAD_VALUE, f"config file {path} not found")])
        cp.read(path)
    violations = _apply_overrides(cp, overrides)
    if seed is not None:
        cp.set("experiment", "seed", str(seed))
    if kind is not None:
        cp.set("experiment", "kind", kind)
    ex = cp["experiment"]

    kind_ = ex.get("kind")
    if kind_ not in KINDS:
        violations.append((E_UNKNOWN_KIND, f"unknown experiment kind {kind_!r}"))
    if "seed" not in ex:
        violations.append((E_SEED_REQUIRED, "seed required"))

    offspring = displacement = None
    try:
        offspring = _build_offspring(cp["offspring"])
        gw.check_supercritical(offspring)
    except KeyError as exc:
        violations.append((E_UNKNOWN_FAMILY, f"unknown offspring family or missing key {exc}"))
    except ValueError as exc:
        violations.append((E_BAD_VALUE, f"offspring: {exc}"))

    dsec = cp["displacement"]
    try:
        tail = _build_tail(dsec)
        declared = dsec.get("regime") or cp["normalization"].get("regime")
        regime = None
        if declared:
            regime = Regime(_REGIME_ALIASES.get(declared, declared))
        displacement = DisplacementLaw(tail, a=float(dsec.get("a", "1")), regime=regime)
    except KeyError as exc:
        violations.append((E_UNKNOWN_FAMILY, f"unknown displacement family or missing key {exc}"))
    except OutOfScopeError as exc:
        violations.append((E_OUT_OF_SCOPE, str(exc)))
    except ValueError as exc:
        code = E_REGIME_MISMATCH if "regime mismatch" in str(exc) else E_BAD_VALUE
        violations.append((code, str(exc)))

    try:
        n = int(ex["n"])
        ns = _ints(ex["ns"]) if "ns" in ex else [n]
        nums = dict(R=int(float(ex["R"])), threads=int(ex["threads"]), node_cap=int(float(ex["node_cap"])),
                    delta=float(cp["normalization"]["delta"]), T=float(cp["normalization"]["T"]),
                    K=float(cp["normalization"]["K"]), k_min=float(cp["window"]["k_min"]),
                    x_min=float(cp["window"]["x_min"]))
        seed_ = int(ex["seed"]) if "seed" in ex else 0
        if seed_ < 0 or seed_ >= 2**64:
            violations.append((E_BAD_VALUE, "seed must be an unsigned 64-bit integer"))
    except ValueError as exc:
        violations.append((E_BAD_VALUE, str(exc)))

    if violations:
        raise ConfigError(violations)
    echo = {s: dict(cp[s]) for s in cp.sections()}
    for key in ("threads", "out"):
        echo["experiment"].pop(key, None)       # scheduling never changes results
    return ExperimentConfig(kind=kind_, offspring=offspring, displacement=displacement, n=n, ns=ns,
                            seed=seed_, out=Path(ex["out"]), verify=dict(cp["verify"]), echo=echo, **nums)


_REGIME_ALIASES = {"suplog": Regime.SUPLOG.value, "sublog": Regime.SUBLOG.value}


# -- artifact writing -------------------------------------------------------------------

class Artifacts:
    def __init__(self, out: Path, kind: str, seed: int):
        self.out = out
        self.stem = f"{kind}_seed{seed}"
        self.paths: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, suffix: str, header, rows) -> Path:
        path = self.out / f"{self.stem}_{suffix}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
        self.paths.append(path)
        return path

    def jsonl(self, suffix: str, records) -> Path:
        path = self.out / f"{self.stem}_{suffix}.jsonl"
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
        self.paths.append(path)
        return path

    def report(self, payload: dict) -> Path:
        path = self.out / "report.json"
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        self.paths.append(path)
        return path

    def manifest(self) -> Path:
        path = self.out / "manifest.txt"
        lines = []
        for p in self.paths:
            digest = hashlib.sha256(p.read_bytes()).hexdigest()
            lines.append(f"{p.name}  sha256:{digest}")
        path.write_text("\n".join(lines) + "\n")
        return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


# -- experiments --------------------------------------------------------------------------

def _norms(cfg: ExperimentConfig, n: int):
    if cfg.displacement.regime is Regime.SUPLOG:
        return compute_norm_seq(cfg.displacement, cfg.offspring.mean, n, cfg.delta, cfg.T, cfg.K)
    return None


def _run_normalize(cfg, art):
    m = cfg.offspring.mean
    ns = cfg.ns if len(cfg.ns) > 1 else list(range(1, cfg.n + 1))
    if cfg.displacement.regime is Regime.SUPLOG:
        rows = [compute_norm_seq(cfg.displacement, m, n, cfg.delta, cfg.T, cfg.K) for n in ns]
        art.csv("norms", ["n", "b_n", "a_n", "y_n", "z_n", "x_n"],
                [(r.n, r.b_n, r.a_n, r.y_n, r.z_n, r.x_n) for r in rows])
        diag = ratio_diagnostics(rows) if len(rows) > 1 else {}
        return {"regime": "suplogarithmic", "ratios": diag}, {}
    art.csv("levels", ["n", "level"], [(n, sublog_level(m, n)) for n in ns])
    return {"regime": "sublogarithmic"}, {}


def _run_simulate(cfg, art):
    config = BRWConfig(cfg.offspring, cfg.displacement, cfg.n, cfg.k_min, cfg.x_min, cfg.node_cap)
    snaps, summary = batch_simulate(config, _norms(cfg, cfg.n), cfg.R, cfg.seed, parallelism=cfg.threads)
    art.jsonl("snapshots", [{"replicate": i, **s.to_json()} for i, s in enumerate(snaps)])
    rows, ident = [], []
    for i, s in enumerate(snaps):
        if not isinstance(s, ExtremalSnapshot):
            continue
        rows.append((i, s.Z_n, s.normalized_max(), s.gap_max, int(s.applicable)))
        if s.survived:
            f = StepFunction.indicator(max(s.scale.line, s.scale.window))
            res = stopping_line_identity_check(s, f)
            ident.append(res)
    art.csv("summary", ["replicate", "Z_n", "normalized_max", "gap_max", "applicable"], rows)
    failed = [s.to_json() for s in snaps if not isinstance(s, ExtremalSnapshot)]
    applicable = [r for r in ident if r.applicable]
    worst = max((r.rel_error for r in applicable), default=0.0)
    flags = {"identity": worst <= 1e-9}
    payload = {"summary": summary, "identity": {"applicable": len(applicable), "not_applicable": len(ident) - len(applicable),
                                                "max_rel_error": worst}, "failed_replicates": failed}
    if failed:
        raise PopulationCapExceeded(f"{len(failed)} replicate(s) exceeded the node cap")
    return payload, flags


def _run_limit_sample(cfg, art):
    cluster = gw.compute_cluster_law(cfg.offspring)
    rng = replicate_rng(cfg.seed, 0)
    w = w_representation(cfg.offspring, rng, size=int(cfg.verify["w_samples"]), cap=int(cfg.verify["w_cap"]))
    c = cfg.x_min
    samples = [sample_cluster_cox(cluster, cfg.offspring, c, w, replicate_rng(cfg.seed, i, 1)) for i in range(cfg.R)]
    art.jsonl("cox", [s.to_json() for s in samples])
    grid = np.linspace(-4, 8, 121)
    art.csv("cdf", ["x", "value"], zip(grid, mixed_gumbel_cdf(grid, cluster.v, w)))
    xs = _floats(cfg.verify["x_grid"])
    art.csv("count_pmf", ["x", "k", "value"],
            [(x, k, float(limit_count_pmf(x, k, cluster.v, w))) for x in xs for k in range(21)])
    return {"v": cluster.v, "l_max": cluster.l_max, "W": w.kind, "samples": cfg.R}, {}


def _run_verify_max(cfg, art):
    thr = cfg.verify.get("ks_threshold")
    rep = max_law_experiment(cfg.offspring, cfg.displacement, cfg.ns, cfg.R, cfg.seed,
                             threshold=float(thr) if thr else None, delta=cfg.delta, T=cfg.T,
                             parallelism=cfg.threads)
    rows = []
    for n, r in rep.results.items():
        rows.extend((n, x, e, f) for x, e, f in zip(r.grid, r.empirical, r.reference))
    art.csv("ecdf", ["n", "x", "empirical", "limit"], rows)
    flags = {f"ks_n{n}": r.passed for n, r in rep.results.items()}
    if len(cfg.ns) > 1:
        flags["ks_nonincreasing"] = rep.nonincreasing
    return rep.to_json(), flags


def _run_verify_pp(cfg, art):
    xs = _floats(cfg.verify["x_grid"])
    rep = point_count_experiment(cfg.offspring, cfg.displacement, cfg.n, cfg.R, xs, cfg.seed,
                                 limit_samples=int(cfg.verify["limit_samples"]), delta=cfg.delta, T=cfg.T,
                                 parallelism=cfg.threads)
    art.csv("tv", ["x", "tv_distinct", "tv_mass"], zip(rep.xs, rep.tv_distinct, rep.tv_mass))
    td, tm = float(cfg.verify["tv_distinct"]), float(cfg.verify["tv_mass"])
    flags = {}
    for x, a, b in zip(rep.xs, rep.tv_distinct, rep.tv_mass):
        flags[f"distinct_x{x:g}"] = a < td
        flags[f"mass_x{x:g}"] = b < tm
    return rep.to_json(), flags


def _run_verify_lemmas(cfg, art):
    law = cfg.displacement
    gamma = float(cfg.verify["gamma"])
    xi = law.tail.xi
    payload, flags = {}, {}
    trunk = lemma_bound_check(law, gamma, xi, _floats(cfg.verify["trunk_grid"]), "trunk")
    payload["trunk"] = trunk.to_json()
    flags["trunk"] = trunk.passed
    rows = [("trunk", g, l, r) for g, l, r in zip(trunk.grid, trunk.lhs, trunk.rhs)]
    if law.regime is Regime.SUPLOG:
        tree = lemma_bound_check(law, gamma, xi, _floats(cfg.verify["tree_grid"]), "tree")
        payload["tree"] = tree.to_json()
        flags["tree"] = tree.passed
        rows += [("tree", g, l, r) for g, l, r in zip(tree.grid, tree.lhs, tree.rhs)]
        rare = rare_event_trend(law, cfg.offspring.mean, _ints(cfg.verify["rare_ns"]),
                                int(float(cfg.verify["rare_samples"])), cfg.seed, cfg.delta, cfg.T, cfg.K)
        payload["rare_event"] = rare.to_json()
        flags["rare_event_nonincreasing"] = rare.nonincreasing
        art.csv("rare_event", ["n", "hits", "upper", "scaled_upper", "log_chebyshev"],
                zip(rare.ns, rare.hits, rare.upper, rare.scaled_upper, rare.log_chebyshev))
    art.csv("bounds", ["variant", "grid", "lhs", "rhs"], rows)
    return payload, flags


def _run_verify_gw(cfg, art):
    off = cfg.offspring
    cluster = gw.compute_cluster_law(off)
    half = gw.compute_cluster_law(off, tol=cluster.tol / 2)
    N = int(cfg.verify["gw_samples"])
    rng = replicate_rng(cfg.seed, 0)
    A = gw.sample_A(cluster, off, rng, size=N)
    pmf = gw.cluster_pmf(cluster, off, 20)
    emp = np.bincount(np.clip(A, 0, 21), minlength=22)[1:21] / N
    tv = 0.5 * float(np.sum(np.abs(emp - pmf[1:21])))
    art.csv("cluster_pmf", ["j", "empirical", "exact"], zip(range(1, 21), emp, pmf[1:21]))
    flags = {"cluster_tv": tv < 0.01, "v_stable": abs(cluster.v - half.v) < 1e-9}
    payload = {"v": cluster.v, "v_half_tol": half.v, "cluster_tv": tv}
    Nw = int(cfg.verify["w_samples"])
    ks, direct, composed = selfsimilarity_check(off, Nw, cfg.seed, cap=int(cfg.verify["w_cap"]))
    payload["selfsimilarity"] = ks.to_json()
    flags["selfsimilarity"] = ks.passed
    if off.family == "linear-fractional":
        w = w_representation(off)
        lf = ks_statistic(direct, w.cdf, left_cdf=lambda x: np.where(x <= 0, 0.0, w.cdf(x)), threshold=0.02)
        payload["closed_form_W"] = lf.to_json()
        flags["closed_form_W"] = lf.passed
    art.csv("W", ["direct", "composed"], zip(direct, composed))
    return payload, flags


def _run_report(cfg, art):
    rows = []
    for rep in sorted(cfg.out.rglob("report.json")):
        if rep.parent == cfg.out:
            continue
        data = json.loads(rep.read_text())
        rows.append((str(rep.parent.relative_to(cfg.out)), data.get("kind"), data.get("seed"),
                     data.get("status"), ",".join(k for k, v in (data.get("flags") or {}).items() if not v)))
    art.csv("table", ["run", "kind", "seed", "status", "failed_flags"], rows)
    return {"runs": len(rows)}, {}


RUNNERS = {
    "normalize": _run_normalize, "simulate": _run_simulate, "limit-sample": _run_limit_sample,
    "verify-max": _run_verify_max, "verify-pp": _run_verify_pp, "verify-lemmas": _run_verify_lemmas,
    "verify-gw": _run_verify_gw, "report": _run_report,
}


def run(cfg: ExperimentConfig) -> int:
    """Run one experiment; exit 0 if every flag passes, 2 on a failed flag, 1 on error."""
    art = Artifacts(cfg.out, cfg.kind, cfg.seed)
    base = {"kind": cfg.kind, "seed": cfg.seed, "config": cfg.echo}
    try:
        payload, flags = RUNNERS[cfg.kind](cfg, art)
    except Exception as exc:   # runtime failure still leaves a report and manifest
        log.error("%s failed: %s", cfg.kind, exc)
        art.report({**base, "status": "error", "error": f"{type(exc).__name__}: {exc}",
                    "traceback": traceback.format_exc().splitlines()[-3:]})
        art.manifest()
        return EXIT_ERROR
    code = EXIT_OK if all(flags.values()) else EXIT_FAIL
    art.report({**base, "status": "pass" if code == EXIT_OK else "fail", "flags": flags, "result": payload})
    art.manifest()
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logsv-brw", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        sp = sub.add_parser(kind)
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=Path, default=None)
        sp.add_argument("--threads", type=int, default=None)
        sp.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.out is not None:
        overrides.append(f"experiment.out={args.out}")
    if args.threads is not None:
        overrides.append(f"experiment.threads={args.threads}")
    try:
        cfg = parse_config(args.config, overrides, kind=args.kind, seed=args.seed)
    except ConfigError as exc:
        for code, msg in exc.violations:
            print(f"error [{code}]: {msg}", file=sys.stderr)
        return EXIT_ERROR
    code = run(cfg)
    log.info("%s finished with exit status %d; artifacts in %s", cfg.kind, code, cfg.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
