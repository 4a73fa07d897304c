"""Inference on SATT when treatment is assigned by independent Bernoulli(p) trials.

The treated count m is then random. The delta method applied to
(sum Y(0) T, m) gives the variance of (1/m) sum Y(0) T, and
((N - m) / N) (t_diff - SATT) standardized by it is asymptotically normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._numeric import fmean, sample_variance
from .core_types import EstimandSpec, IntervalResult, ObservedExperiment, VarianceMode
from .errors import DegenerateVariance, GroupTooSmall, NoControls
from .estimators import DEGENERATE_MESSAGE, normal_quantile


@dataclass(frozen=True)
class BernoulliVariancePieces:
    sigma_matrix: np.ndarray
    gradient: np.ndarray
    p_hat: float
    mean_y0: float
    sigma0_sq: float
    variance: float


def bernoulli_satt_variance(obs: ObservedExperiment, *, literal: bool = False) -> BernoulliVariancePieces:
    """Delta-method variance of (1/m) sum Y(0) T with control-group plug-ins.

    The unobservable treated control-outcome sum in the gradient is estimated by
    ``m / (N - m) * sum Y(0) (1 - T)``. ``literal=True`` uses the unscaled
    control sum instead, which only targets the right quantity when p = 1/2.
    """
    n, m = obs.n, obs.m
    if m < 1:
        raise GroupTooSmall("no treated units")
    if n - m < 2:
        raise NoControls(f"need at least 2 control units, got {n - m}")
    control = obs.control
    p_hat = m / n
    mu = fmean(control)
    s0sq = sample_variance(control)
    control_sum = math.fsum(control)
    treated_y0_sum = control_sum if literal else m / (n - m) * control_sum
    q = n * p_hat * (1 - p_hat)
    sigma = np.array([[q * (s0sq + mu * mu), q * mu], [q * mu, q]])
    grad = np.array([1.0 / m, -treated_y0_sum / m**2])
    variance = float(grad @ sigma @ grad)
    if s0sq == 0.0 and not literal:
        # the quadratic form cancels algebraically; drop the rounding residue
        variance = 0.0
    return BernoulliVariancePieces(
        sigma_matrix=sigma,
        gradient=grad,
        p_hat=p_hat,
        mean_y0=mu,
        sigma0_sq=s0sq,
        variance=max(variance, 0.0),
    )


def bernoulli_satt_interval(obs: ObservedExperiment, alpha: float = 0.05, *, literal: bool = False) -> IntervalResult:
    pieces = bernoulli_satt_variance(obs, literal=literal)
    if not pieces.variance > 0.0:
        raise DegenerateVariance(DEGENERATE_MESSAGE)
    scale = obs.n / (obs.n - obs.m)
    treated, control = obs.treated, obs.control
    return IntervalResult(
        estimand=EstimandSpec.satt(),
        center=fmean(treated) - fmean(control),
        half_width=normal_quantile(alpha) * scale * math.sqrt(pieces.variance),
        level=1.0 - alpha,
        variance=scale * scale * pieces.variance,
        variance_mode=VarianceMode.PAPER_ASYMPTOTIC,
        omega=1.0,
    )
