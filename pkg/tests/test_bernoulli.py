from statistics import NormalDist

import numpy as np
import pytest

from satmix import EstimandSpec, ObservedExperiment, interval
from satmix.bernoulli_design import bernoulli_satt_interval, bernoulli_satt_variance
from satmix.errors import DegenerateVariance, NoControls


def obs_from(y_treated, y_control):
    y = np.r_[y_treated, y_control]
    t = np.r_[np.ones(len(y_treated)), np.zeros(len(y_control))]
    return ObservedExperiment(y=y, t=t)


def test_constant_controls_collapse():
    obs = obs_from([1.0, 2.0, 3.0], [5.0, 5.0, 5.0, 5.0])
    assert bernoulli_satt_variance(obs).variance == 0.0
    with pytest.raises(DegenerateVariance):
        bernoulli_satt_interval(obs)


def test_mean_zero_controls_drop_cross_terms():
    control = np.array([-2.0, -1.0, 1.0, 2.0])
    obs = obs_from([0.5, 1.5, 2.5, 3.5], control)
    pieces = bernoulli_satt_variance(obs)
    n, m = 8, 4
    p = m / n
    assert pieces.variance == pytest.approx(n * p * (1 - p) * control.var(ddof=1) / m**2, rel=1e-14)


def test_variance_nonnegative(rng):
    for _ in range(200):
        n = int(rng.integers(5, 40))
        m = int(rng.integers(1, n - 1))
        obs = obs_from(rng.normal(size=m), rng.standard_cauchy(size=n - m))
        assert bernoulli_satt_variance(obs).variance >= 0.0
        assert bernoulli_satt_variance(obs, literal=True).variance >= 0.0


def test_alpha_scaling(rng):
    obs = obs_from(rng.normal(size=30), rng.normal(size=40))
    a = bernoulli_satt_interval(obs, 0.32)
    b = bernoulli_satt_interval(obs, 0.05)
    z = NormalDist().inv_cdf
    assert a.half_width / b.half_width == pytest.approx(z(0.84) / z(0.975), rel=1e-12)


def test_close_to_complete_randomization_at_large_n():
    rng = np.random.default_rng(7)
    n = 10_000
    t = (rng.random(n) < 0.5).astype(int)
    y = rng.normal(3.0, 2.0, size=n) + t
    obs = ObservedExperiment(y=y, t=t)
    bern = bernoulli_satt_interval(obs)
    complete = interval(obs, EstimandSpec.satt())
    assert bern.center == pytest.approx(complete.center, rel=1e-12)
    assert bern.half_width == pytest.approx(complete.half_width, rel=0.10)


def test_literal_variant_matches_at_half():
    obs = obs_from([1.0, 2.0, 4.0, 0.0], [3.0, 1.0, 2.0, 6.0])
    a = bernoulli_satt_variance(obs).variance
    b = bernoulli_satt_variance(obs, literal=True).variance
    assert a == pytest.approx(b, rel=1e-14)


def test_needs_controls():
    with pytest.raises(NoControls):
        bernoulli_satt_variance(obs_from([1.0, 2.0, 3.0], [1.0]))
