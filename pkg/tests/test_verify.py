import math

import numpy as np
import pytest

from logsv_brw.galton_watson import deterministic, explicit, geometric, poisson
from logsv_brw.limit_laws import LinearFractionalW
from logsv_brw.tail_model import DisplacementLaw, lognormal_tail, power_log
from logsv_brw.verify import (clopper_pearson_upper, empirical_pmf, ks_2samp, ks_statistic, lemma_bound_check,
                              max_law_experiment, point_count_experiment, rare_event_trend, selfsimilarity_check,
                              truncated_moment_excess, tv_distance, two_sample_band)

SQRT_LOG = DisplacementLaw(power_log(1.0, 0.5))
HALF_LOG_SQ = DisplacementLaw(power_log(0.5, 2.0))
LOGNORMAL = DisplacementLaw(lognormal_tail())


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


def test_ks_single_point():
    assert ks_statistic([0.5], uniform_cdf).statistic == pytest.approx(0.5)


def test_ks_two_points():
    assert ks_statistic([0.25, 0.75], uniform_cdf).statistic == pytest.approx(0.25)


def test_ks_calibration():
    u = np.random.default_rng(12345).random(100_000)
    r = ks_statistic(u, uniform_cdf)
    assert r.statistic < 1.95 / math.sqrt(1e5)
    assert r.passed and r.threshold == r.bands["0.01"]


def test_ks_atom_uses_left_limit():
    w = LinearFractionalW(0.5)
    sample = np.concatenate([np.zeros(500), np.random.default_rng(0).exponential(2.0, 500)])
    with_left = ks_statistic(sample, w.cdf, left_cdf=lambda x: np.where(x <= 0, 0.0, w.cdf(x)))
    assert with_left.statistic < 0.07


def test_ks_empty():
    with pytest.raises(ValueError):
        ks_statistic([], uniform_cdf)


def test_ks_two_sample_identical_constant():
    r = ks_2samp(np.ones(100), np.ones(100))
    assert r.statistic == 0.0 and r.passed
    assert two_sample_band(100, 100, 0.01) == pytest.approx(1.6276 * math.sqrt(0.02), rel=1e-3)


def test_tv_and_pmf():
    assert tv_distance({0: 0.5, 1: 0.5}, {0: 1.0}) == pytest.approx(0.5)
    assert empirical_pmf([0, 0, 2, 2]) == {0: 0.5, 2: 0.5}


def test_trunk_bound_example():
    rep = lemma_bound_check(HALF_LOG_SQ, 0.5, 1 / 3, [1e8], "trunk")
    L = 0.5 * math.log(1e8) ** 2
    assert rep.rhs[0] == pytest.approx(1 + 2 / L)
    assert rep.lhs[0] <= rep.rhs[0] and rep.passed


def test_trunk_small_gamma_limit():
    y = 1e6
    excess = truncated_moment_excess(HALF_LOG_SQ, 1e-14, y)
    assert 1 + excess == pytest.approx(1 - HALF_LOG_SQ.tail_prob(y), abs=1e-10)
    assert 1 + excess <= 1.0 + 1e-12


def test_trunk_grid_all_pass():
    rep = lemma_bound_check(HALF_LOG_SQ, 0.5, 1 / 3, [1e4, 1e6, 1e8, 1e10], "trunk")
    assert rep.passes == [True] * 4
    assert all(l > 0 and r > 0 for l, r in zip(rep.lhs, rep.rhs))


def test_tree_bound_grid():
    rep = lemma_bound_check(LOGNORMAL, 0.5, 1 / 3, [1e6, 1e8, 1e10, 1e12], "tree", y_frac=0.6, z_frac=0.1)
    assert rep.passed and all(p for p in rep.passes)
    assert all(l > 0 for l in rep.lhs)


def test_tree_bound_empty_window():
    # y = 0.9x, z = 0.1x leaves the window (y, x - z] empty
    rep = lemma_bound_check(LOGNORMAL, 0.5, 1 / 3, [1e10], "tree", y_frac=0.9, z_frac=0.1)
    assert rep.lhs == [0.0] and rep.passed


def test_tree_bound_rejects_bad_geometry():
    with pytest.raises(ValueError):
        lemma_bound_check(LOGNORMAL, 0.5, 1 / 3, [1e8], "tree", y_frac=0.4)


def test_clopper_pearson():
    assert clopper_pearson_upper(0, 1) == pytest.approx(0.95)
    assert clopper_pearson_upper(0, 1000) == pytest.approx(1 - 0.05 ** (1 / 1000), rel=1e-10)
    assert 0.01 < clopper_pearson_upper(10, 1000) < 0.02


def test_rare_event_impossible_certificate():
    rep = rare_event_trend(LOGNORMAL, 2.0, [4], 10, seed=1, K=100.0)
    assert rep.impossible == [True] and rep.upper == [0.0] and rep.hits == [0]


def test_rare_event_single_sample():
    rep = rare_event_trend(LOGNORMAL, 2.0, [4], 1, seed=1)
    assert 0.0 < rep.upper[0] <= 1.0
    assert math.isfinite(rep.log_chebyshev[0])


def test_rare_event_needs_suplog():
    with pytest.raises(ValueError):
        rare_event_trend(SQRT_LOG, 2.0, [4], 10, seed=1)


def test_selfsimilarity_deterministic():
    r, a, b = selfsimilarity_check(deterministic(2), 1000, seed=1)
    assert r.statistic == 0.0


def test_selfsimilarity_poisson():
    r, _, _ = selfsimilarity_check(poisson(2.0), 10_000, seed=12345)
    assert r.statistic < r.bands["0.01"]


def test_selfsimilarity_linear_fractional():
    r, direct, composed = selfsimilarity_check(geometric(2.0), 10_000, seed=12345)
    assert r.passed
    w = LinearFractionalW(0.5)
    for sample in (direct, composed):
        ks = ks_statistic(sample, w.cdf, left_cdf=lambda x: np.where(x <= 0, 0.0, w.cdf(x)))
        assert ks.statistic < ks.bands["0.01"]


def test_max_law_small_run():
    rep = max_law_experiment(deterministic(2), SQRT_LOG, [6], 300, seed=5)
    assert 0.0 <= rep.results[6].statistic <= 1.0
    assert rep.v == pytest.approx(2.0)


def test_max_law_insufficient_replication():
    sparse = explicit([(0, 0.9), (30, 0.1)])
    with pytest.raises(ValueError, match="insufficient replication"):
        max_law_experiment(sparse, SQRT_LOG, [4], 60, seed=1)


def test_point_count_window_check():
    with pytest.raises(ValueError, match="window below threshold"):
        point_count_experiment(deterministic(2), SQRT_LOG, 10, 120, [-5.0], seed=1, limit_samples=1000)


def test_point_count_empty_window():
    x = 40.0
    rep = point_count_experiment(deterministic(2), SQRT_LOG, 8, 150, [x], seed=1, limit_samples=1000)
    assert rep.tv_distinct[0] == pytest.approx(1 - math.exp(-2 * math.exp(-x)), abs=1e-12)
    assert rep.tv_mass[0] == 0.0
