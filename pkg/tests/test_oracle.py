import math

import numpy as np
import pytest

from satmix import ScienceTable, VarianceMode
from satmix.core_types import science_moments
from satmix.errors import EnumerationTooLarge, InvalidInput, UnknownFormula
from satmix.randomization_oracle import (
    FORMULAS,
    Statistic,
    enumerate_assignments,
    exact_cov,
    exact_moments,
    relative_error,
    verify_all,
    verify_formula,
)


def random_table(rng, n):
    return ScienceTable(y0=rng.normal(size=n), y1=rng.normal(2.0, 3.0, size=n))


def test_enumeration_counts():
    assert len(list(enumerate_assignments(4, 2))) == 6
    assert len(list(enumerate_assignments(12, 6))) == 924
    assert [tuple(t) for t in enumerate_assignments(2, 1)] == [(1, 0), (0, 1)]


def test_enumeration_each_subset_once():
    seen = {tuple(t) for t in enumerate_assignments(7, 3)}
    assert len(seen) == math.comb(7, 3)
    assert all(sum(t) == 3 for t in seen)


def test_enumeration_rank_ranges_partition():
    full = [tuple(t) for t in enumerate_assignments(8, 4)]
    parts = [tuple(t) for a, b in ((0, 20), (20, 50), (50, None)) for t in enumerate_assignments(8, 4, start=a, stop=b)]
    assert parts == full


def test_enumeration_cap():
    with pytest.raises(EnumerationTooLarge):
        list(enumerate_assignments(30, 15))
    assert len(list(enumerate_assignments(6, 3, cap=20))) == 20


def test_m_out_of_range():
    with pytest.raises(InvalidInput):
        list(enumerate_assignments(4, 0))


def test_sign_table_satt_moments(sign_table):
    mo = exact_moments(sign_table, 2, Statistic.SATT)
    assert mo.mean == pytest.approx(0.0, abs=1e-12)
    assert mo.variance == pytest.approx(10001 / 6, rel=1e-12)
    assert mo.n_assignments == 6


def test_sign_table_cov_satt_satc(sign_table):
    cov = exact_cov(sign_table, 2, (Statistic.SATT, Statistic.SATC))
    assert cov == pytest.approx(-(20002 / 3) / 4, rel=1e-12)
    assert cov == pytest.approx(-exact_moments(sign_table, 2, Statistic.SATT).variance, rel=1e-12)


def test_constant_effect_has_no_satt_variance():
    table = ScienceTable(y0=[0, 3, 1, 8, 2], y1=[1, 4, 2, 9, 3])
    assert exact_moments(table, 2, Statistic.SATT).variance == pytest.approx(0, abs=1e-24)
    assert exact_cov(table, 2, (Statistic.SATT, Statistic.SATC)) == pytest.approx(0, abs=1e-24)


def test_tdiff_minus_sate_unbiased(rng):
    for n in (4, 7, 10):
        table = random_table(rng, n)
        mo = exact_moments(table, n // 2, Statistic.TDIFF_MINUS_SATE)
        assert mo.mean == pytest.approx(0, abs=1e-12)


def test_satt_satc_equal_sate_in_expectation(rng):
    table = random_table(rng, 9)
    for stat in (Statistic.SATT, Statistic.SATC):
        assert exact_moments(table, 4, stat).mean == pytest.approx(table.sate, rel=1e-12, abs=1e-12)


def test_satt_satc_mix_at_p_is_sate_everywhere(rng):
    table = random_table(rng, 8)
    m, n = 3, 8
    p = m / n
    for t in enumerate_assignments(n, m):
        tau = table.tau
        satt = tau[t == 1].mean()
        satc = tau[t == 0].mean()
        assert p * satt + (1 - p) * satc == pytest.approx(table.sate, abs=1e-12)


def test_assignment_identity(rng):
    table = random_table(rng, 7)
    n, m = 7, 3
    k = n / (m * (n - m))
    for t in enumerate_assignments(n, m):
        tr = t == 1
        tdiff = table.y1[tr].mean() - table.y0[~tr].mean()
        satt = table.tau[tr].mean()
        satc = table.tau[~tr].mean()
        rhs0 = k * table.y0[tr].sum() - table.y0.sum() / (n - m) + satt
        rhs1 = table.y1.sum() / m - k * table.y1[~tr].sum() + satc
        assert tdiff == pytest.approx(rhs0, abs=1e-12)
        assert tdiff == pytest.approx(rhs1, abs=1e-12)


def test_satt_variance_exact(rng):
    for _ in range(10):
        n = int(rng.integers(4, 11))
        m = int(rng.integers(1, n))
        table = random_table(rng, n)
        mom = science_moments(table)
        exact = exact_moments(table, m, Statistic.TDIFF_MINUS_SATT).variance
        assert exact == pytest.approx(mom.sigma0_sq * n / (m * (n - m)), rel=1e-10)


def test_verify_formula_sign_table(sign_table):
    for fid in ("sate_variance", "satt_variance", "satc_variance", "var_satt"):
        assert verify_formula(sign_table, 2, fid).passed(1e-10)
    exact = verify_formula(sign_table, 2, "cov_satt_satc")
    assert exact.passed(1e-10)
    gap = verify_formula(sign_table, 2, "cov_satt_satc", VarianceMode.PAPER_ASYMPTOTIC)
    assert gap.formula_value / gap.exact_value == pytest.approx(4 / 3, rel=1e-12)


def test_verify_all_exact_on_random_table(rng):
    table = random_table(rng, 6)
    verdicts = verify_all(table, 3)
    exact = [v for v in verdicts if v.mode is VarianceMode.EXACT]
    assert len(exact) == len(FORMULAS) + 4
    assert all(v.relative_error < 1e-10 for v in exact)


def test_mix_asymptotic_within_two_over_n_for_regular_table(rng):
    table = random_table(rng, 12)
    for w in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = verify_formula(table, 6, "mix_variance", VarianceMode.PAPER_ASYMPTOTIC, omega=w)
        assert v.relative_error <= 2 / 12


def test_unknown_formula(sign_table):
    with pytest.raises(UnknownFormula):
        verify_formula(sign_table, 2, "no_such_formula")


def test_mix_needs_omega(sign_table):
    with pytest.raises(InvalidInput):
        verify_formula(sign_table, 2, "mix_variance")


def test_relative_error_rules():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(0.0, 1e-30) == math.inf
    assert relative_error(2.0, 1.0) == 0.5
    assert relative_error(-2.0, -3.0) == 0.5


def test_moments_order_independent(rng):
    table = random_table(rng, 9)
    perm = rng.permutation(9)
    shuffled = ScienceTable(y0=table.y0[perm], y1=table.y1[perm])
    a = exact_moments(table, 4, Statistic.TDIFF_MINUS_SATE).variance
    b = exact_moments(shuffled, 4, Statistic.TDIFF_MINUS_SATE).variance
    assert a == pytest.approx(b, rel=1e-14)
