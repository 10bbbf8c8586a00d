import csv
import math

import numpy as np
import pytest

from logsv_brw.normalization import (compute_norm_seq, lognormal_asymptotic_a, lognormal_asymptotic_b, norm_table,
                                     ratio_diagnostics, sublog_level, write_norm_csv)
from logsv_brw.tail_model import DisplacementLaw, lognormal_tail, power_log

HALF_LOG_SQ = DisplacementLaw(power_log(0.5, 2.0))
LOGNORMAL = DisplacementLaw(lognormal_tail())


def test_closed_form_n8():
    s = compute_norm_seq(HALF_LOG_SQ, math.e, 8, delta=0.1)
    assert s.b_n == pytest.approx(math.e ** 4, rel=1e-12)
    assert s.a_n == pytest.approx(math.e ** 4 / 4, rel=1e-12)
    assert s.y_n == pytest.approx(0.9 * math.e ** 4, rel=1e-12)


def test_closed_form_all_n():
    # L(b) = n  =>  b = exp(sqrt(2n)), a = b / sqrt(2n)
    for n in range(1, 51):
        s = compute_norm_seq(HALF_LOG_SQ, math.e, n)
        assert abs(s.b_n / math.exp(math.sqrt(2 * n)) - 1) < 1e-9
        assert abs(s.a_n / (s.b_n / math.sqrt(2 * n)) - 1) < 1e-9


def test_invariants():
    for n in (1, 5, 20, 80):
        s = compute_norm_seq(LOGNORMAL, 2.0, n, delta=0.2, T=3.0, K=-1.5)
        assert 0 < s.a_n and s.y_n < s.b_n
        assert s.x_n == pytest.approx(s.b_n - 1.5 * s.a_n)
        assert LOGNORMAL.tail_prob(s.b_n) == pytest.approx(2.0 ** -n, rel=1e-9)
        if n == 1:
            assert s.z_n == 0.0


def test_tail_scaling_improves_with_n():
    # m^n P[X > b_n + a_n x] -> e^{-x}
    errs = []
    for n in (10, 20, 40, 80):
        s = compute_norm_seq(LOGNORMAL, 2.0, n)
        errs.append(abs(2.0 ** n * LOGNORMAL.tail_prob(s.b_n + 2 * s.a_n) / math.exp(-2) - 1))
    assert np.all(np.diff(errs) < 0)


def test_lognormal_a_asymptotic():
    s = compute_norm_seq(LOGNORMAL, 2.0, 1000)
    assert s.a_n / lognormal_asymptotic_a(2.0, 1000, s.b_n) == pytest.approx(1.0, abs=0.01)


def test_lognormal_b_ratio_moves_toward_one():
    ratios = [compute_norm_seq(LOGNORMAL, 2.0, n).b_n / lognormal_asymptotic_b(2.0, n) for n in (10, 100, 1000, 10000)]
    assert np.all(np.diff(np.abs(np.log(ratios))) < 0)


def test_errors():
    with pytest.raises(ValueError, match="normalization undefined"):
        compute_norm_seq(DisplacementLaw(power_log(1.0, 0.5)), 2.0, 5)
    with pytest.raises(ValueError):
        compute_norm_seq(LOGNORMAL, 1.0, 5)
    with pytest.raises(ValueError):
        compute_norm_seq(LOGNORMAL, 2.0, 0)


def test_sublog_level():
    assert sublog_level(2.0, 10) == pytest.approx(10 * math.log(2))
    assert sublog_level(math.e, 7, 1.0) == pytest.approx(8.0)
    assert sublog_level(2.0, 16, -math.log(2)) == pytest.approx(15 * math.log(2))


def test_ratio_diagnostics_trace():
    rows = norm_table(LOGNORMAL, 2.0, [10, 100, 1000, 10000])
    d = ratio_diagnostics(rows)
    assert d["z_over_b_decreasing"]
    assert len(d["a_over_z"]) == 4


def test_csv_roundtrip(tmp_path):
    rows = norm_table(LOGNORMAL, 2.0, range(1, 6))
    path = tmp_path / "norms.csv"
    write_norm_csv(rows, path)
    with open(path) as fh:
        data = list(csv.DictReader(fh))
    assert [int(r["n"]) for r in data] == [1, 2, 3, 4, 5]
    assert float(data[2]["b_n"]) == rows[2].b_n
