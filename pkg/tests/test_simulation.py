import numpy as np
import pytest

from satmix import EstimandSpec, RhoAssumption
from satmix.core_types import science_moments
from satmix.errors import InvalidInput, InvalidMarginals
from satmix import simulation_lab as lab


def small_plan(**kw):
    base = dict(n_samples=20, n_assignments=50, estimands=(EstimandSpec.satt(), EstimandSpec.sate()))
    base.update(kw)
    return lab.ReplicationPlan(**base)


def test_generate_is_deterministic():
    d = lab.DgpSpec.random_coefficient(1.0, n=200, seed=3)
    a, b = lab.generate(d), lab.generate(d)
    assert np.array_equal(a.y0, b.y0) and np.array_equal(a.y1, b.y1)
    c = lab.generate(lab.DgpSpec.random_coefficient(1.0, n=200, seed=4))
    assert not np.array_equal(a.y0, c.y0)


def test_zero_heterogeneity_collapse():
    t = lab.generate(lab.DgpSpec.random_coefficient(0.0, n=300, seed=1))
    assert np.array_equal(t.y1, t.y0)
    assert science_moments(t).sigma_tau_sq == 0.0


def test_binary_variance_ratio():
    assert lab.binary_variance_ratio(0.1, 0.2) == pytest.approx(0.16 / 0.09)
    t = lab.generate(lab.DgpSpec.binary(0.1, 0.2, n=200_000, seed=2))
    mom = science_moments(t)
    assert mom.sigma1_sq / mom.sigma0_sq == pytest.approx(0.16 / 0.09, rel=0.03)
    assert np.all(t.y1 >= t.y0)


def test_binary_marginals_validated():
    with pytest.raises(InvalidMarginals):
        lab.DgpSpec.binary(0.3, 0.2)
    with pytest.raises(InvalidMarginals):
        lab.DgpSpec.binary(0.3, 0.7)


def test_tobit_variance_ratio_matches_draws():
    tau = 1.5
    t = lab.generate(lab.DgpSpec.tobit(tau, n=400_000, seed=5))
    mom = science_moments(t)
    assert mom.sigma1_sq / mom.sigma0_sq == pytest.approx(lab.tobit_variance_ratio(tau), rel=0.01)
    assert lab.tobit_variance_ratio(0.0) == 1.0


def test_treated_count_guards():
    assert lab.treated_count(100, 0.3) == 30
    with pytest.raises(InvalidInput):
        lab.treated_count(4, 0.1)


def test_random_assignments_are_subsets(rng):
    idx = lab.random_assignments(rng, 10, 4, 500)
    assert idx.shape == (500, 4)
    assert all(len(set(row)) == 4 for row in idx)
    counts = np.bincount(idx.ravel(), minlength=10)
    assert counts.min() > 120


def test_identity_gap_is_rounding_level(rng):
    table = lab.generate(lab.DgpSpec.random_coefficient(2.0, n=500, seed=1))
    gap = lab.realized_identity_gap(table, lab.random_assignments(rng, 500, 200, 100))
    assert gap.max() < 1e-12


def test_run_is_bit_reproducible():
    d = lab.DgpSpec.random_coefficient(1.0, n=100, seed=11)
    a = lab.run(d, small_plan())
    b = lab.run(d, small_plan())
    assert a == b


def test_run_record_shape():
    d = lab.DgpSpec.random_coefficient(1.0, n=100, seed=11)
    rep = lab.run(d, small_plan())
    assert [r.estimand for r in rep.records] == ["satt", "sate[rho=neyman]"]
    for r in rep.records:
        assert r.n_intervals + r.n_skipped == 20 * 50
        assert 0.0 <= r.coverage_target <= 1.0


def test_satt_interval_length_matches_neyman_ratio():
    d = lab.DgpSpec.random_coefficient(1.0, n=400, seed=2)
    rep = lab.run(d, small_plan())
    satt, sate = rep.records
    # sigma1^2 = sigma0^2 + sigma_tau^2 = 2 and p = 1/2: ratio sqrt(1 / 1.5)
    assert satt.mean_length / sate.mean_length == pytest.approx((1 / 1.5) ** 0.5, rel=0.03)


def test_heterogeneity_hurts_sate_coverage_of_satt_interval():
    plan = lab.ReplicationPlan(n_samples=60, n_assignments=60, estimands=(EstimandSpec.satt(),))
    zero = lab.run(lab.DgpSpec.random_coefficient(0.0, n=400, seed=3), plan).records[0]
    high = lab.run(lab.DgpSpec.random_coefficient(2.0, n=400, seed=3), plan).records[0]
    assert zero.coverage_sate == pytest.approx(0.95, abs=0.02)
    assert high.coverage_target == pytest.approx(0.95, abs=0.02)
    assert high.coverage_sate < 0.90


def test_sato_rejects_at_least_as_often_as_sate():
    plan = lab.ReplicationPlan(
        n_samples=40,
        n_assignments=50,
        estimands=(EstimandSpec.sate(RhoAssumption.neyman()), EstimandSpec.sato(RhoAssumption.one())),
    )
    rep = lab.run(lab.DgpSpec.tobit(1.0, n=300, seed=4), plan)
    sate, sato = rep.records
    assert sato.reject_rate >= sate.reject_rate


def test_normality_large_n_passes():
    d = lab.DgpSpec.random_coefficient(1.0, n=400, seed=0)
    diag = lab.normality_diagnostic(d, 0.5, 100_000, seed=1)
    assert diag.p_value > 0.01
    assert diag.n_assignments == 100_000


def test_normality_tiny_heavy_tail_fails():
    from satmix import ScienceTable

    table = ScienceTable(y0=[0.0, 0.0, 0.0, 100.0], y1=[0.0, 0.0, 0.0, 100.0])
    diag = lab.normality_diagnostic(table, 0.5, 2000, seed=1)
    assert diag.ks_statistic > 0.2


def test_grid_cardinality():
    dgps = lab.grid(lab.DgpKind.RANDOM_COEFFICIENT, [0.0, 0.5, 1.0], n=50, seed=1)
    assert [d.sigma_tau for d in dgps] == [0.0, 0.5, 1.0]
    tob = lab.grid(lab.DgpKind.TOBIT, [1.0, 2.0], n=50, seed=1)
    assert all(d.kind is lab.DgpKind.TOBIT for d in tob)


def test_bernoulli_coverage_counts_degenerate_draws():
    from satmix import ScienceTable

    table = ScienceTable(y0=np.arange(6.0), y1=np.arange(6.0) + 1)
    res = lab.bernoulli_coverage(table, 0.5, 200, seed=3)
    assert res.n_degenerate_m > 0
    assert res.n_intervals + res.n_degenerate_m + res.n_degenerate_variance == 200


def test_bernoulli_coverage_near_nominal():
    table = lab.generate(lab.DgpSpec.random_coefficient(1.0, n=1000, seed=8))
    res = lab.bernoulli_coverage(table, 0.5, 1000, seed=9)
    assert res.coverage == pytest.approx(0.95, abs=3 * 0.0069 + 0.01)
