import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satmix import (
    EstimandSpec,
    ExperimentSummary,
    ObservedExperiment,
    RhoAssumption,
    ScienceTable,
    VarianceMode,
    bounded_rho_variance,
    combine_satt_satc,
    covariate_adjust,
    diff_in_means,
    empirical_rho_bound,
    interval,
    length_gain,
    mse_sate_satt,
    neyman_variance,
    optimal_omega,
    recentered_variance,
    rho_one_variance,
    rho_threshold,
    sp_decomposition,
    summarize,
    variance_decomposition,
    variance_ratio_test,
)
from satmix.core_types import IntervalResult
from satmix.errors import (
    DegenerateDenominator,
    DegenerateVariance,
    GroupTooSmall,
    MismatchedInputs,
    RankDeficient,
    RhoOutOfRange,
    RhoRequired,
    ZeroSigma,
)
from satmix.estimators import sate_variance_formula

Z975 = NormalDist().inv_cdf(0.975)


def summary(n=100, m=50, mean1=0.0, mean0=0.0, s1sq=1.0, s0sq=1.0):
    return ExperimentSummary(n=n, m=m, mean1=mean1, mean0=mean0, s1sq=s1sq, s0sq=s0sq)


summaries = st.builds(
    lambda n, frac, s1, s0, m1, m0: summary(n, min(n - 2, max(2, int(frac * n))), m1, m0, s1, s0),
    st.integers(6, 10_000),
    st.floats(0.01, 0.99),
    st.floats(1e-3, 1e3),
    st.floats(1e-3, 1e3),
    st.floats(-100, 100),
    st.floats(-100, 100),
)


# ---------------------------------------------------------------- point estimates


def test_diff_in_means():
    assert diff_in_means(summary(mean1=1.0, mean0=0.0)) == 1.0
    assert diff_in_means(summary(mean1=2.5, mean0=2.5)) == 0.0


def test_diff_in_means_sign_table(sign_table):
    t = np.array([1, 0, 0, 1])
    assert diff_in_means(summarize(sign_table.observe(t))) == 50.5


# ---------------------------------------------------------------- recentered variances


def test_satt_variance_value():
    assert recentered_variance(summary(n=100, m=50, s0sq=1.0), EstimandSpec.satt()) == pytest.approx(0.04, rel=1e-15)


@pytest.mark.parametrize("m", [10, 50, 90])
def test_equal_spreads_rho_one_all_coincide(m):
    s = summary(m=m, s1sq=2.0, s0sq=2.0)
    v = [recentered_variance(s, e) for e in (EstimandSpec.satt(), EstimandSpec.satc(), EstimandSpec.sate(RhoAssumption.one()))]
    assert v[0] == pytest.approx(v[1], rel=1e-14) == pytest.approx(v[2], rel=1e-14)


def test_sign_table_satt_is_degenerate(sign_table):
    assert recentered_variance(sign_table, EstimandSpec.satt(), m=2) == 0.0
    obs = sign_table.observe([1, 1, 0, 0])
    with pytest.raises(DegenerateVariance, match="regularity"):
        interval(obs, EstimandSpec.satt())


def test_science_table_needs_m(sign_table):
    with pytest.raises(Exception):
        recentered_variance(sign_table, EstimandSpec.satt())


def test_rho_required_for_sate_without_value():
    with pytest.raises(RhoRequired):
        recentered_variance(summary(), EstimandSpec.sate(RhoAssumption.empirical()))


@given(summaries)
def test_mix_at_p_equals_sate(s):
    for rho in (RhoAssumption.neyman(), RhoAssumption.one(), RhoAssumption.known(-0.4)):
        sate = recentered_variance(s, EstimandSpec.sate(rho))
        mix = recentered_variance(s, EstimandSpec.mix(s.p, rho))
        assert mix == pytest.approx(sate, rel=1e-12)
        asym = recentered_variance(s, EstimandSpec.mix(s.p, rho), mode=VarianceMode.PAPER_ASYMPTOTIC)
        assert asym == pytest.approx(sate, rel=2 / s.n)


def test_mix_half_cross_check():
    s = summary(n=200, m=80, s1sq=3.0, s0sq=1.5)
    rho = RhoAssumption.known(0.3)
    n, m, p = s.n, s.m, s.p
    c = 0.3 * math.sqrt(4.5)
    st_ = 4.5 - 2 * c
    w = 0.5
    direct = (
        sate_variance_formula(1.5, 3.0, c, n, m)
        + st_ / n * (w * w * (1 - p) / p + (1 - w) ** 2 * p / (1 - p) - 2 * w * (1 - w))
        - 2 * (w / (n * p) * (3.0 - c) - st_ / n + (1 - w) / (n * (1 - p)) * (1.5 - c))
    )
    assert recentered_variance(s, EstimandSpec.mix(0.5, rho)) == pytest.approx(direct, rel=1e-14)


# ---------------------------------------------------------------- classical estimators


def test_neyman_variance_examples():
    assert neyman_variance(summary(n=4, m=2, s1sq=1, s0sq=1)) == 1.0
    assert neyman_variance(summary(n=6, m=4, s1sq=2, s0sq=1)) == 1.0


@given(summaries)
def test_neyman_population_form(s):
    k = 1 / (s.n * s.p * (1 - s.p))
    assert neyman_variance(s) == pytest.approx((s.s1sq * (1 - s.p) + s.s0sq * s.p) * k, rel=1e-12)
    assert recentered_variance(s, EstimandSpec.sate()) == pytest.approx(neyman_variance(s), rel=1e-12)


def test_rho_one_variance_examples():
    assert rho_one_variance(summary(n=4, m=2, s1sq=1, s0sq=1)) == pytest.approx(1.0, rel=1e-15)
    s = summary(s1sq=2.0, s0sq=2.0)
    assert rho_one_variance(s) == pytest.approx(neyman_variance(s), rel=1e-14)


@given(summaries)
def test_rho_one_not_above_neyman(s):
    gap = neyman_variance(s) - rho_one_variance(s)
    assert gap == pytest.approx((s.s1 - s.s0) ** 2 / s.n, rel=1e-6, abs=1e-12 * neyman_variance(s))
    if s.s1sq != s.s0sq:
        assert rho_one_variance(s) < neyman_variance(s)


@given(summaries)
def test_bounded_rho_coincidences_and_monotonicity(s):
    assert bounded_rho_variance(s, 1.0) == pytest.approx(rho_one_variance(s), rel=1e-12)
    k = 1 / (s.n * s.p * (1 - s.p))
    assert bounded_rho_variance(s, 0.0) == pytest.approx((s.p**2 * s.s0sq + (1 - s.p) ** 2 * s.s1sq) * k, rel=1e-12)
    values = [bounded_rho_variance(s, r) for r in np.linspace(-1, 1, 21)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_bounded_rho_range():
    with pytest.raises(RhoOutOfRange):
        bounded_rho_variance(summary(), 1.01)


# ---------------------------------------------------------------- empirical bound


def test_empirical_bound_identical_marginals():
    obs = ObservedExperiment(y=[1, 2, 3, 3, 1, 2], t=[1, 1, 1, 0, 0, 0])
    assert empirical_rho_bound(obs) == pytest.approx(1.0)


def test_empirical_bound_constant_treated_falls_back():
    obs = ObservedExperiment(y=[4, 4, 4, 1, 2, 3], t=[1, 1, 1, 0, 0, 0])
    assert empirical_rho_bound(obs) == 1.0


def test_empirical_bound_two_point_marginals():
    obs = ObservedExperiment(y=[0, 2, 0, 2, 0, 1, 0, 1], t=[1, 1, 1, 1, 0, 0, 0, 0])
    assert empirical_rho_bound(obs) == pytest.approx(1.0)


def test_empirical_bound_in_range(rng):
    for _ in range(50):
        y = rng.exponential(size=30)
        t = rng.permutation(np.r_[np.ones(12), np.zeros(18)])
        assert -1.0 <= empirical_rho_bound(ObservedExperiment(y=y, t=t)) <= 1.0


def test_empirical_bound_needs_groups():
    with pytest.raises(GroupTooSmall):
        empirical_rho_bound(ObservedExperiment(y=[1, 2, 3], t=[1, 0, 0]))


# ---------------------------------------------------------------- intervals


def test_interval_half_width():
    r = interval(summary(n=100, m=50, s0sq=1.0), EstimandSpec.satt(), 0.05)
    assert r.variance == pytest.approx(0.04, rel=1e-15)
    assert r.half_width == pytest.approx(0.391993, abs=1e-6)
    assert r.level == 0.95


def test_interval_alpha_near_one_shrinks():
    r = interval(summary(), EstimandSpec.satt(), 0.999999)
    assert r.half_width < 1e-6


@given(summaries)
def test_satt_to_neyman_length_ratio(s):
    a = interval(s, EstimandSpec.satt())
    b = interval(s, EstimandSpec.sate())
    assert a.length / b.length == pytest.approx(s.s0 / math.sqrt(s.s1sq * (1 - s.p) + s.s0sq * s.p), rel=1e-12)


@given(summaries)
def test_shorter_of_satt_satc_beats_sate(s):
    if s.s1sq == s.s0sq:
        return
    shortest = min(interval(s, EstimandSpec.satt()).length, interval(s, EstimandSpec.satc()).length)
    assert shortest < interval(s, EstimandSpec.sate()).length
    assert shortest < interval(s, EstimandSpec.sate(RhoAssumption.one())).length


def test_interval_from_observed_matches_summary():
    obs = ObservedExperiment(y=[0, 2, 1, 3], t=[1, 1, 0, 0])
    r = interval(obs, EstimandSpec.satt())
    assert r.center == -1.0
    assert r.half_width == pytest.approx(2.7718, abs=1e-4)


# ---------------------------------------------------------------- interval algebra


def _iv(kind, lo, hi):
    spec = EstimandSpec.satt() if kind == "satt" else EstimandSpec.satc()
    return IntervalResult(spec, (lo + hi) / 2, (hi - lo) / 2, 0.95, ((hi - lo) / 2 / Z975) ** 2, VarianceMode.EXACT)


def test_combine_direct():
    r = combine_satt_satc(_iv("satt", -1, 1), _iv("satc", -2, 2), 0.5)
    assert (r.lower, r.upper) == (-1.5, 1.5)


def test_combine_identical_inputs():
    r = combine_satt_satc(_iv("satt", -1, 3), _iv("satc", -1, 3), 0.3)
    assert (r.lower, r.upper) == pytest.approx((-1, 3), rel=1e-15)


def test_combine_mismatch():
    with pytest.raises(MismatchedInputs):
        combine_satt_satc(_iv("satt", -1, 1), _iv("satc", -1, 2), 0.5)


# ---------------------------------------------------------------- thresholds and tests


def test_rho_threshold_examples():
    assert rho_threshold(1, 1, 0.5).value == pytest.approx(1.0)
    t = rho_threshold(1, 2, 0.5)
    assert t.value == pytest.approx(-0.25) and t.in_range
    with pytest.raises(ZeroSigma):
        rho_threshold(0, 1, 0.5)


def test_rho_threshold_sign_flip_on_grid():
    s0, s1, p, n = 1.0, 1.5, 0.4, 1000
    m = p * n
    bar = rho_threshold(s0, s1, p).value
    v_satt = s0**2 * n / (m * (n - m))
    for rho in np.linspace(-1, 1, 201):
        v_sate = sate_variance_formula(s0**2, s1**2, rho * s0 * s1, n, m)
        assert (v_sate <= v_satt + 1e-15) if rho <= bar else (v_sate > v_satt)


def test_ratio_test_examples():
    r = variance_ratio_test(summary(n=400, m=200, s1sq=1, s0sq=1))
    assert r.statistic < 0 and not r.reject
    r = variance_ratio_test(summary(n=400, m=200, s1sq=3, s0sq=1))
    assert r.p_value == pytest.approx(0.5, abs=1e-12)
    r = variance_ratio_test(summary(n=400, m=200, s1sq=10, s0sq=1))
    assert r.statistic == pytest.approx((math.log(10) - math.log(3)) / math.sqrt(4 / 199), rel=1e-12)
    assert r.statistic == pytest.approx(8.49, abs=0.01)
    assert r.reject and r.reject == (r.p_value <= r.alpha)


def test_ratio_test_needs_variation():
    with pytest.raises(DegenerateVariance):
        variance_ratio_test(summary(s1sq=0.0))


# ---------------------------------------------------------------- optimal weight


def test_optimal_omega_examples():
    assert optimal_omega(1, 1, 0.3).omega == 0.5
    assert optimal_omega(1, 2, 0.0).omega == pytest.approx(0.8)
    with pytest.raises(DegenerateDenominator):
        optimal_omega(1, 1, 1.0)
    clipped = optimal_omega(1, 3, 0.9)
    assert clipped.clipped and clipped.omega == 1.0 and clipped.raw > 1


def test_optimal_omega_matches_grid_argmin():
    s = summary(n=1000, m=300, s1sq=4.0, s0sq=1.0)
    rho = RhoAssumption.known(0.0)
    grid = np.linspace(0, 1, 1001)
    v = [recentered_variance(s, EstimandSpec.mix(w, rho)) for w in grid]
    assert grid[int(np.argmin(v))] == pytest.approx(0.8, abs=1e-3)


# ---------------------------------------------------------------- gains and mse


def test_mse_examples():
    assert mse_sate_satt(0.0, 10, 0.5) == 0.0
    assert mse_sate_satt(4.0, 100, 0.5) == pytest.approx(0.02)
    assert mse_sate_satt(4.0, 10**9, 0.5) < 1e-8


def test_length_gain_examples():
    assert length_gain(2.0, 0.5) == pytest.approx(0.1835, abs=5e-5)
    assert length_gain(1.0, 0.5) == 0.0
    assert length_gain(0.16 / 0.09, 0.1) == pytest.approx(0.2330, abs=5e-4)
    assert length_gain(0.5, 0.5) < 0
    assert length_gain(1.0, 0.5, rho_star=1.0) == pytest.approx(0.0, abs=1e-15)


# ---------------------------------------------------------------- decompositions


def test_decomposition_constant_effect():
    table = ScienceTable(y0=[0, 1, 3, 7, 2], y1=[2, 3, 5, 9, 4])
    d = variance_decomposition(table, 2)
    assert d.components["var_satt_term"] == pytest.approx(0, abs=1e-12)
    assert d.components["covariance_term"] == pytest.approx(0, abs=1e-12)


def test_decomposition_sign_table(sign_table):
    d = variance_decomposition(sign_table, 2, method="enumerate")
    assert d.total == pytest.approx(10001 / 6, rel=1e-12)
    assert sum(d.components.values()) == pytest.approx(d.total, rel=1e-10)


def test_decomposition_methods_agree(rng):
    for _ in range(20):
        n = int(rng.integers(4, 11))
        table = ScienceTable(y0=rng.normal(size=n), y1=rng.normal(size=n))
        m = int(rng.integers(1, n))
        a = variance_decomposition(table, m, method="enumerate")
        b = variance_decomposition(table, m, method="closed_form")
        assert sum(a.components.values()) == pytest.approx(a.total, rel=1e-10)
        for k in a.components:
            assert a.components[k] == pytest.approx(b.components[k], rel=1e-9, abs=1e-12)


def test_sp_decomposition_examples():
    d = sp_decomposition(1.0, 1.0, 100, 50, rho=1.0)
    assert d.var_sate == 0.0
    assert d.var_tdiff_minus_sate == d.var_tdiff
    with pytest.raises(RhoRequired):
        sp_decomposition(1.0, 2.0, 100, 40)


# ---------------------------------------------------------------- covariates


def test_covariate_intercept_gives_centered_outcomes():
    y = np.array([1.0, 4.0, 2.0, 7.0, 3.0, 5.0])
    obs = ObservedExperiment(y=y, t=[1, 1, 1, 0, 0, 0], x=np.ones(6))
    assert covariate_adjust(obs).y == pytest.approx(y - y.mean(), abs=1e-12)


def test_covariate_exact_fit_is_degenerate():
    x = np.arange(8.0)
    obs = ObservedExperiment(y=2 * x + 1, t=[1, 0] * 4, x=np.c_[np.ones(8), x])
    adj = covariate_adjust(obs)
    assert np.all(adj.y == 0.0)
    with pytest.raises(DegenerateVariance):
        interval(adj, EstimandSpec.satt())


def test_covariate_rank_deficient():
    x = np.arange(6.0)
    with pytest.raises(RankDeficient):
        covariate_adjust(ObservedExperiment(y=x, t=[1, 0] * 3, x=np.c_[x, 2 * x]))


def test_covariate_adjust_reorder_equivariant(rng):
    n = 30
    x = np.c_[np.ones(n), rng.normal(size=(n, 2))]
    y = rng.normal(size=n)
    t = rng.permutation(np.r_[np.ones(12), np.zeros(18)])
    perm = rng.permutation(n)
    a = summarize(covariate_adjust(ObservedExperiment(y=y, t=t, x=x)))
    b = summarize(covariate_adjust(ObservedExperiment(y=y[perm], t=t[perm], x=x[perm])))
    for f in ("mean1", "mean0", "s1sq", "s0sq"):
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=1e-10, abs=1e-13)
