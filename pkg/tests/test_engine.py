import json
import math

import numpy as np
import pytest

from logsv_brw.engine import (BRWConfig, PopulationCapExceeded, batch_simulate, normalize_atoms, normalize_snapshot,
                              replicate_rng, simulate_tree, stopping_line_identity_check)
from logsv_brw.galton_watson import deterministic, explicit, pgf_iterate, poisson
from logsv_brw.normalization import compute_norm_seq
from logsv_brw.step import StepFunction
from logsv_brw.tail_model import DisplacementLaw, Regime, lognormal_tail, power_log

SQRT_LOG = DisplacementLaw(power_log(1.0, 0.5))
LOGNORMAL = DisplacementLaw(lognormal_tail())


class ScriptedLaw:
    """Displacement stand-in returning preset draws (log scale)."""

    def __init__(self, draws):
        self.draws = list(draws)
        self.tail = SQRT_LOG.tail
        self.regime = Regime.SUBLOG

    def sample_log(self, rng, size):
        out, self.draws = self.draws[:size], self.draws[size:]
        return np.log(np.asarray(out, dtype=float))


def test_single_generation_two_draws():
    cfg = BRWConfig(deterministic(2), ScriptedLaw([3.0, 7.0]), 1, x_min=-100.0)
    s = simulate_tree(cfg, None, np.random.default_rng(0))
    assert s.Z_n == 2
    assert s.M_n == pytest.approx(7.0)
    assert sorted(s.V_atoms) == pytest.approx([3.0, 7.0])


def test_constant_sampler_five_generations():
    c = 4.0
    cfg = BRWConfig(deterministic(2), ScriptedLaw([c] * 62), 5, x_min=-100.0)
    s = simulate_tree(cfg, None, np.random.default_rng(0))
    assert s.Z_n == 32
    assert np.allclose(s.V_atoms, 5 * c)
    assert np.allclose(s.T_atoms, c)
    assert s.M_n == pytest.approx(5 * c)


def test_normalize_atoms_examples():
    b, a = 50.0, 7.0
    assert np.allclose(normalize_atoms([b, b + a], "suplog", b_n=b, a_n=a), [0.0, 1.0])
    assert normalize_atoms([math.e ** 9], "sublog", tail=SQRT_LOG.tail, level=2.0)[0] == pytest.approx(1.0)
    assert list(normalize_atoms([5, 3, 5], "recenter")) == [0, -2, 0]
    assert normalize_atoms([], "recenter").size == 0


def _identity_errors(law, norms, seeds, n=12):
    cfg = BRWConfig(poisson(2.0), law, n)
    worst, skipped, checked = 0.0, 0, 0
    for i in seeds:
        s = simulate_tree(cfg, norms, replicate_rng(99, i))
        floor = max(s.scale.line, s.scale.window)
        for f in (StepFunction.indicator(floor), StepFunction((floor + 0.5, floor + 2.0, math.inf), (1.0, 0.25))):
            r = stopping_line_identity_check(s, f)
            if r.applicable:
                checked += 1
                worst = max(worst, r.rel_error)
            else:
                skipped += 1
                assert "not applicable" in r.reason
    return worst, checked, skipped


def test_identity_sublog():
    worst, checked, _ = _identity_errors(SQRT_LOG, None, range(30))
    assert checked > 0 and worst <= 1e-9


def test_identity_suplog():
    norms = compute_norm_seq(LOGNORMAL, 2.0, 12, T=0.25)
    assert norms.z_n <= norms.delta * norms.b_n
    worst, checked, _ = _identity_errors(LOGNORMAL, norms, range(30))
    assert checked > 0 and worst <= 1e-9


def test_identity_counting_form():
    cfg = BRWConfig(poisson(2.0), SQRT_LOG, 12)
    s = simulate_tree(cfg, None, replicate_rng(5, 0))
    x = max(s.scale.line, s.scale.window) + 0.1
    r = stopping_line_identity_check(s, StepFunction.indicator(x))
    assert r.lhs == np.sum(normalize_snapshot(s, which="T") > x)
    assert r.rhs == np.sum(s.line_E[normalize_snapshot(s, which="line") > x])


def test_identity_rejects_f_below_line():
    cfg = BRWConfig(poisson(2.0), SQRT_LOG, 12)
    s = simulate_tree(cfg, None, replicate_rng(5, 0))
    with pytest.raises(ValueError):
        stopping_line_identity_check(s, StepFunction.indicator(s.scale.line - 1.0))


def test_extinct_tree_gives_zero_pair():
    law = explicit([(0, 0.5), (3, 0.5)])
    cfg = BRWConfig(law, SQRT_LOG, 8)
    for i in range(50):
        s = simulate_tree(cfg, None, replicate_rng(1, i))
        if not s.survived:
            r = stopping_line_identity_check(s, StepFunction.indicator(0.0))
            assert (r.lhs, r.rhs) == (0.0, 0.0)
            assert s.log_V_atoms.size == 0
            return
    pytest.fail("no extinct tree among 50 seeds")


def test_batch_parallelism_invariant():
    cfg = BRWConfig(poisson(2.0), SQRT_LOG, 8)
    a, _ = batch_simulate(cfg, None, 4, seed=17, parallelism=1)
    b, _ = batch_simulate(cfg, None, 4, seed=17, parallelism=4)
    assert [json.dumps(s.to_json()) for s in a] == [json.dumps(s.to_json()) for s in b]


def test_deterministic_always_survives():
    _, summary = batch_simulate(BRWConfig(deterministic(2), SQRT_LOG, 10), None, 100, seed=3)
    assert summary["survivors"] == 100
    assert summary["mean_Z_n"] == 1024


def test_poisson_survival_fraction():
    law = poisson(2.0)
    p10 = 1.0 - float(pgf_iterate(law, 0.0, 10))
    _, summary = batch_simulate(BRWConfig(law, SQRT_LOG, 10), None, 10_000, seed=4)
    assert abs(summary["survivors"] / 10_000 - p10) < 0.02


def test_node_cap():
    cfg = BRWConfig(deterministic(2), SQRT_LOG, 12, node_cap=1000)
    with pytest.raises(PopulationCapExceeded):
        simulate_tree(cfg, None, np.random.default_rng(0))
    snaps, summary = batch_simulate(cfg, None, 3, seed=1)
    assert summary["failed"] == 3
    assert snaps[0].to_json()["error"].startswith("visited nodes exceed cap")


def test_suplog_needs_norms():
    with pytest.raises(ValueError):
        simulate_tree(BRWConfig(deterministic(2), LOGNORMAL, 4), None, np.random.default_rng(0))


def test_snapshot_diagnostics_suplog():
    norms = compute_norm_seq(LOGNORMAL, 2.0, 10)
    s = simulate_tree(BRWConfig(deterministic(2), LOGNORMAL, 10), norms, np.random.default_rng(2))
    for key in ("A1_above", "A2_empty", "A3_above", "gap_over_a"):
        assert key in s.diagnostics
    assert np.all(normalize_snapshot(s) > -6.0)
    assert np.all(np.diff(s.log_V_atoms) <= 0)
    assert s.visited == 2 ** 11 - 1


def test_sublog_gap_shrinks_with_n():
    medians = []
    for n in (8, 12, 16):
        snaps, _ = batch_simulate(BRWConfig(deterministic(2), SQRT_LOG, n), None, 100, seed=21, stream=n)
        medians.append(np.median([s.gap_max for s in snaps]))
    assert medians[0] > medians[1] > medians[2]


def test_suplog_gap_shrinks_with_n():
    medians = []
    for n in (8, 12, 16):
        norms = compute_norm_seq(LOGNORMAL, 2.0, n)
        snaps, _ = batch_simulate(BRWConfig(deterministic(2), LOGNORMAL, n), norms, 100, seed=21, stream=n)
        medians.append(np.median([s.diagnostics["gap_over_a"] for s in snaps]))
    assert medians[0] > medians[1] > medians[2]
