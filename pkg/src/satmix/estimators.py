"""Closed-form estimators, recentered variances, thresholds and intervals.

Notation: ``k = 1 / (N p (1 - p))`` is the design constant, ``cross`` stands for
``rho * sigma0 * sigma1`` (the covariance of the potential outcomes). Formula
helpers prefixed ``*_formula`` are plain arithmetic and broadcast over numpy
arrays; the simulation engine relies on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Union

import numpy as np

from .core_types import (
    EstimandKind,
    EstimandSpec,
    ExperimentSummary,
    IntervalResult,
    ObservedExperiment,
    RhoAssumption,
    RhoKind,
    ScienceTable,
    VarianceMode,
    science_moments,
    summarize,
)
from .errors import (
    DegenerateDenominator,
    DegenerateVariance,
    GroupTooSmall,
    InvalidInput,
    MismatchedInputs,
    RankDeficient,
    RhoOutOfRange,
    RhoRequired,
    ZeroSigma,
)

_STD_NORMAL = NormalDist()

Source = Union[ExperimentSummary, ObservedExperiment, ScienceTable]

DEGENERATE_MESSAGE = (
    "variance of the recentered difference-in-means is zero: an outcome column is "
    "constant, the normal limit's regularity condition fails (max squared deviation / "
    "total squared deviation is 0/0) and the interval would collapse to the single point t_diff"
)


# ---------------------------------------------------------------------------
# formula kernels


def design_constant(n, m):
    """k(N, m) = 1 / (p (1 - p) N) = N / (m (N - m))."""
    return n / (m * (n - m))


def sate_variance_formula(s0sq, s1sq, cross, n, m):
    p = m / n
    return (p * p * s0sq + (1 - p) ** 2 * s1sq + 2 * p * (1 - p) * cross) * design_constant(n, m)


def mix_variance_formula(s0sq, s1sq, cross, n, m, omega, mode=VarianceMode.EXACT):
    """Variance of t_diff - (omega SATT + (1 - omega) SATC).

    The three-line closed form; PAPER_ASYMPTOTIC keeps the (N - 1)
    denominators, EXACT replaces them by N, which is what enumeration certifies.
    """
    p = m / n
    d = n - 1 if VarianceMode(mode) is VarianceMode.PAPER_ASYMPTOTIC else n
    st = s0sq + s1sq - 2 * cross
    w = omega
    line1 = sate_variance_formula(s0sq, s1sq, cross, n, m)
    line2 = st / d * (w * w * (1 - p) / p + (1 - w) ** 2 * p / (1 - p) - 2 * w * (1 - w))
    line3 = -2 * (
        w / (d * p) * (s1sq - cross) - st / d + (1 - w) / (d * (1 - p)) * (s0sq - cross)
    )
    return line1 + line2 + line3


def omega_star_formula(s0sq, s1sq, cross, p):
    """Variance-minimizing weight, clipped to [0, 1]; ``p`` where every weight ties."""
    den = s0sq + s1sq - 2 * cross
    num = s1sq - cross
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(den > 0, num / np.where(den > 0, den, 1.0), p)
    out = np.clip(raw, 0.0, 1.0)
    return float(out) if np.ndim(out) == 0 else out


def recentered_variance_formula(kind, s0sq, s1sq, cross, n, m, omega=None, mode=VarianceMode.EXACT):
    kind = EstimandKind(kind)
    if kind is EstimandKind.SATT:
        return s0sq * design_constant(n, m)
    if kind is EstimandKind.SATC:
        return s1sq * design_constant(n, m)
    if kind is EstimandKind.SATE:
        return sate_variance_formula(s0sq, s1sq, cross, n, m)
    return mix_variance_formula(s0sq, s1sq, cross, n, m, omega, mode)


@dataclass(frozen=True)
class BlockMoments:
    """Randomization moments of the building blocks (SATT, SATC, treated sums)."""

    var_satt: float
    var_satc: float
    cov_satt_satc: float
    cov_satt_y0sum: float
    cov_satc_y0sum: float
    cov_y1sum_y0sum: float
    var_y0sum: float


def block_moments(s0sq, s1sq, cross, n, m, mode=VarianceMode.EXACT) -> BlockMoments:
    """Exact finite-N moments, or the (N - 1) variants in PAPER_ASYMPTOTIC mode."""
    p = m / n
    st = s0sq + s1sq - 2 * cross
    if VarianceMode(mode) is VarianceMode.EXACT:
        return BlockMoments(
            var_satt=(1 / m - 1 / n) * st,
            var_satc=(1 / (n - m) - 1 / n) * st,
            cov_satt_satc=-st / n,
            cov_satt_y0sum=(1 - p) * (cross - s0sq),
            cov_satc_y0sum=-p * (cross - s0sq),
            cov_y1sum_y0sum=p * (1 - p) * n * cross,
            var_y0sum=m * (n - m) / n * s0sq,
        )
    return BlockMoments(
        var_satt=(n - m) / (m * (n - 1)) * st,
        var_satc=m / ((n - m) * (n - 1)) * st,
        cov_satt_satc=-st / (n - 1),
        cov_satt_y0sum=(1 - p) * n / (n - 1) * (cross - s0sq),
        cov_satc_y0sum=-m / (n - 1) * (cross - s0sq),
        cov_y1sum_y0sum=p * (1 - p) * n * n / (n - 1) * cross,
        var_y0sum=m * (n - m) / (n - 1) * s0sq,
    )


# ---------------------------------------------------------------------------
# resolving a source + estimand into plug-in moments


@dataclass(frozen=True)
class _Plug:
    n: int
    m: int
    s0sq: float
    s1sq: float
    cross: Optional[float]


def _cross_from_rho(rho: float, s0sq: float, s1sq: float) -> float:
    return rho * math.sqrt(s0sq * s1sq)


def _resolve(source: Source, estimand: EstimandSpec, m: Optional[int]) -> _Plug:
    rho = estimand.rho
    if isinstance(source, ScienceTable):
        if m is None:
            raise InvalidInput("m is required when the source is a science table")
        if not 1 <= m <= source.n - 1:
            raise InvalidInput(f"need 1 <= m <= N-1, got m={m}, N={source.n}")
        mom = science_moments(source)
        s0sq, s1sq, n = mom.sigma0_sq, mom.sigma1_sq, source.n
        if rho.kind is RhoKind.TRUE:
            cross = mom.cov01
        else:
            cross = rho.cross(s0sq, s1sq)
            cross = None if cross is None else float(cross)
        return _Plug(n, int(m), s0sq, s1sq, cross)

    obs = None
    if isinstance(source, ObservedExperiment):
        obs = source
        source = summarize(source)
    if not isinstance(source, ExperimentSummary):
        raise InvalidInput(f"unsupported source type {type(source).__name__}")
    if m is not None and m != source.m:
        raise MismatchedInputs(f"m={m} disagrees with the summary's m={source.m}")
    cross = rho.cross(source.s0sq, source.s1sq)
    if cross is not None:
        cross = float(cross)
    elif rho.kind is RhoKind.EMPIRICAL and obs is not None:
        cross = _cross_from_rho(empirical_rho_bound(obs), source.s0sq, source.s1sq)
    return _Plug(source.n, source.m, source.s0sq, source.s1sq, cross)


def _require_cross(plug: _Plug, estimand: EstimandSpec) -> float:
    if plug.cross is None:
        raise RhoRequired(
            f"{estimand.kind.value} needs a correlation value; rho assumption "
            f"'{estimand.rho.label}' cannot be resolved from this input"
        )
    return plug.cross


def _omega_for(plug: _Plug, estimand: EstimandSpec) -> float:
    kind = estimand.kind
    p = plug.m / plug.n
    if kind is EstimandKind.SATT:
        return 1.0
    if kind is EstimandKind.SATC:
        return 0.0
    if kind is EstimandKind.SATE:
        return p
    if kind is EstimandKind.MIX:
        return estimand.omega
    return omega_star_formula(plug.s0sq, plug.s1sq, _require_cross(plug, estimand), p)


def resolve_omega(source: Source, estimand: EstimandSpec, *, m: Optional[int] = None) -> float:
    """Weight on SATT of ``estimand`` for this input (p for SATE, omega* for SATO)."""
    return _omega_for(_resolve(source, estimand, m), estimand)


def recentered_variance(
    source: Source,
    estimand: EstimandSpec,
    *,
    m: Optional[int] = None,
    mode: VarianceMode = VarianceMode.EXACT,
) -> float:
    """Variance of ``t_diff - estimand`` under complete randomization.

    Parameters
    ----------
    source
        An ``ExperimentSummary`` or ``ObservedExperiment`` (plug-in group
        variances) or a ``ScienceTable`` (population variances; ``m`` required).
    estimand
        Target. SATE, MIX and SATO need a correlation from ``estimand.rho``.
    mode
        Only affects MIX and SATO: EXACT is the finite-N value, PAPER_ASYMPTOTIC
        the asymptotic expression with (N - 1) covariances. The super-population
        sampling model uses the same expressions with super-population moments.

    Returns
    -------
    float
        The variance. It may be 0 (and, in PAPER_ASYMPTOTIC mode for extreme
        inputs, slightly negative); ``interval`` rejects such values.
    """
    return _variance_and_omega(_resolve(source, estimand, m), estimand, mode)[0]


def _variance_and_omega(plug: _Plug, estimand: EstimandSpec, mode) -> tuple[float, float]:
    kind = estimand.kind
    cross = 0.0 if kind in (EstimandKind.SATT, EstimandKind.SATC) else _require_cross(plug, estimand)
    omega = _omega_for(plug, estimand)
    var = recentered_variance_formula(kind, plug.s0sq, plug.s1sq, cross, plug.n, plug.m, omega, mode)
    return float(var), float(omega)


# ---------------------------------------------------------------------------
# classical SATE variance estimators


def diff_in_means(summary: ExperimentSummary) -> float:
    return summary.mean1 - summary.mean0


def neyman_variance(summary: ExperimentSummary) -> float:
    return summary.s1sq / summary.m + summary.s0sq / (summary.n - summary.m)


def rho_one_variance(summary: ExperimentSummary) -> float:
    p = summary.p
    return (p * summary.s0 + (1 - p) * summary.s1) ** 2 / (summary.n * (1 - p) * p)


def bounded_rho_variance(summary: ExperimentSummary, rho_star: float) -> float:
    """SATE variance with the correlation replaced by an upper bound ``rho_star``."""
    if not -1.0 <= rho_star <= 1.0:
        raise RhoOutOfRange(f"rho* must lie in [-1, 1], got {rho_star}")
    cross = _cross_from_rho(rho_star, summary.s0sq, summary.s1sq)
    return float(sate_variance_formula(summary.s0sq, summary.s1sq, cross, summary.n, summary.m))


def _quantile_grid(sorted_values: np.ndarray, k: int) -> np.ndarray:
    # inverted-CDF empirical quantiles at levels (i + 1/2) / k along the last axis
    n = sorted_values.shape[-1]
    levels = (np.arange(k) + 0.5) / k
    idx = np.clip(np.ceil(levels * n).astype(int) - 1, 0, n - 1)
    return sorted_values[..., idx]


def comonotone_correlation(a, b) -> np.ndarray | float:
    """Correlation of the comonotone coupling of two empirical marginals.

    Works row-wise on 2-D input. Rows where a marginal is constant fall back to 1.
    """
    a = np.sort(np.asarray(a, dtype=float), axis=-1)
    b = np.sort(np.asarray(b, dtype=float), axis=-1)
    k = min(a.shape[-1], b.shape[-1])
    qa = _quantile_grid(a, k)
    qb = _quantile_grid(b, k)
    qa = qa - qa.mean(axis=-1, keepdims=True)
    qb = qb - qb.mean(axis=-1, keepdims=True)
    sab = (qa * qb).sum(axis=-1)
    saa = (qa * qa).sum(axis=-1)
    sbb = (qb * qb).sum(axis=-1)
    ok = (saa > 0) & (sbb > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(ok, sab / np.sqrt(np.where(ok, saa * sbb, 1.0)), 1.0)
    r = np.clip(r, -1.0, 1.0)
    return float(r) if r.ndim == 0 else r


def empirical_rho_bound(obs: ObservedExperiment) -> float:
    """Largest correlation compatible with the observed marginals (comonotone coupling)."""
    if obs.m < 2 or obs.n - obs.m < 2:
        raise GroupTooSmall("each group needs at least 2 units")
    return float(comonotone_correlation(obs.treated, obs.control))


# ---------------------------------------------------------------------------
# intervals


def normal_quantile(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha}")
    return _STD_NORMAL.inv_cdf(1.0 - alpha / 2.0)


def interval(
    source: Union[ExperimentSummary, ObservedExperiment],
    estimand: EstimandSpec,
    alpha: float = 0.05,
    mode: VarianceMode = VarianceMode.EXACT,
) -> IntervalResult:
    """Normal-theory interval centered at the difference in means.

    A confidence interval for SATE, a prediction interval for the random
    estimands (SATT, SATC, mixes, SATO).
    """
    z = normal_quantile(alpha)
    plug = _resolve(source, estimand, None)
    var, omega = _variance_and_omega(plug, estimand, mode)
    if not var > 0.0:
        raise DegenerateVariance(DEGENERATE_MESSAGE)
    summary = summarize(source) if isinstance(source, ObservedExperiment) else source
    return IntervalResult(
        estimand=estimand,
        center=diff_in_means(summary),
        half_width=z * math.sqrt(var),
        level=1.0 - alpha,
        variance=var,
        variance_mode=VarianceMode(mode),
        omega=omega,
    )


def combine_satt_satc(pi_satt: IntervalResult, pi_satc: IntervalResult, p: float) -> IntervalResult:
    """Convex combination of SATT and SATC prediction intervals: a CI for SATE.

    With intervals from :func:`interval` this equals the SATE interval that
    bounds the correlation at 1.
    """
    if pi_satt.center != pi_satc.center or pi_satt.level != pi_satc.level:
        raise MismatchedInputs("prediction intervals must share center and level")
    if pi_satt.estimand.kind is not EstimandKind.SATT or pi_satc.estimand.kind is not EstimandKind.SATC:
        raise MismatchedInputs("expected one SATT and one SATC prediction interval")
    if not 0.0 < p < 1.0:
        raise InvalidInput(f"p must lie in (0, 1), got {p}")
    lower = p * pi_satt.lower + (1 - p) * pi_satc.lower
    upper = p * pi_satt.upper + (1 - p) * pi_satc.upper
    half = p * pi_satt.half_width + (1 - p) * pi_satc.half_width
    z = _STD_NORMAL.inv_cdf(0.5 + pi_satt.level / 2.0)
    return IntervalResult(
        estimand=EstimandSpec.sate(rho=RhoAssumption.one()),
        center=(lower + upper) / 2.0,
        half_width=(upper - lower) / 2.0,
        level=pi_satt.level,
        variance=(half / z) ** 2 if z > 0 else 0.0,
        variance_mode=pi_satt.variance_mode,
        omega=p,
    )


# ---------------------------------------------------------------------------
# thresholds, tests, weights, gains


@dataclass(frozen=True)
class RhoThreshold:
    value: float
    in_range: bool


def rho_threshold(sigma0: float, sigma1: float, p: float) -> RhoThreshold:
    """Correlation at which the SATE and SATT recentered variances coincide.

    Below it SATE is estimated at least as precisely as SATT, above it less so.
    The raw value is returned even when it falls outside [-1, 1].
    """
    if sigma0 <= 0 or sigma1 <= 0:
        raise ZeroSigma("both standard deviations must be positive")
    if not 0.0 < p < 1.0:
        raise InvalidInput(f"p must lie in (0, 1), got {p}")
    value = (sigma0**2 * (1 - p**2) - (1 - p) ** 2 * sigma1**2) / (2 * p * (1 - p) * sigma0 * sigma1)
    return RhoThreshold(value=value, in_range=-1.0 <= value <= 1.0)


@dataclass(frozen=True)
class RatioTestResult:
    statistic: float
    threshold: float
    p_value: float
    reject: bool
    alpha: float


def variance_ratio_threshold(p: float) -> float:
    return math.sqrt((1 - p * p) / (1 - p) ** 2)


def variance_ratio_test(summary: ExperimentSummary, alpha: float = 0.05) -> RatioTestResult:
    """One-sided z test of H0: sigma1 / sigma0 <= sqrt((1 - p^2) / (1 - p)^2).

    Uses the normal-theory standard error sqrt(2/(m-1) + 2/(N-m-1)) of the log
    variance ratio. Rejection means the SATE/SATT threshold correlation is negative.
    """
    m, n0 = summary.m, summary.n - summary.m
    if m < 2 or n0 < 2:
        raise GroupTooSmall("each group needs at least 2 units")
    if summary.s0sq <= 0 or summary.s1sq <= 0:
        raise DegenerateVariance("log variance ratio undefined: a group has zero sample variance")
    threshold = variance_ratio_threshold(summary.p)
    se = math.sqrt(2.0 / (m - 1) + 2.0 / (n0 - 1))
    z = (math.log(summary.s1sq / summary.s0sq) - math.log(threshold**2)) / se
    p_value = 1.0 - _STD_NORMAL.cdf(z)
    return RatioTestResult(statistic=z, threshold=threshold, p_value=p_value, reject=p_value <= alpha, alpha=alpha)


@dataclass(frozen=True)
class OptimalOmega:
    omega: float
    raw: float
    clipped: bool


def optimal_omega(sigma0: float, sigma1: float, rho: float) -> OptimalOmega:
    """Weight on SATT minimizing the variance of the recentered difference in means.

    Depends only on the ratio ``sigma1 / sigma0`` and ``rho``, never on the
    treated share. Clipped to [0, 1].
    """
    if sigma0 <= 0:
        raise ZeroSigma("sigma0 must be positive")
    if not -1.0 <= rho <= 1.0:
        raise RhoOutOfRange(f"rho must lie in [-1, 1], got {rho}")
    r = sigma1 / sigma0
    den = r * r + 1 - 2 * rho * r
    if den <= 1e-15 * (r * r + 1):
        raise DegenerateDenominator("constant treatment effect (rho = 1, equal spreads): every weight is optimal")
    raw = (r * r - rho * r) / den
    omega = min(1.0, max(0.0, raw))
    return OptimalOmega(omega=omega, raw=raw, clipped=omega != raw)


def mse_sate_satt(sigma_tau_sq: float, m: int, p: float) -> float:
    """Mean squared distance between SATT and SATE: (1 - p) / m * sigma_tau^2."""
    return (1 - p) / m * sigma_tau_sq


def length_gain(r_sq: float, p: float, rho_star: Optional[float] = None) -> float:
    """Relative shortening of the SATT interval against a SATE interval.

    ``r_sq`` is sigma1^2 / sigma0^2. The baseline is Neyman's variance when
    ``rho_star`` is None, otherwise the SATE variance with rho bounded by
    ``rho_star``. Negative values mean the SATT interval is longer.
    """
    if r_sq <= 0:
        raise InvalidInput("variance ratio must be positive")
    if not 0.0 < p < 1.0:
        raise InvalidInput(f"p must lie in (0, 1), got {p}")
    if rho_star is None:
        return 1.0 - 1.0 / math.sqrt(r_sq * (1 - p) + p)
    r = math.sqrt(r_sq)
    return 1.0 - 1.0 / math.sqrt(p * p + (1 - p) ** 2 * r_sq + 2 * p * (1 - p) * rho_star * r)


# ---------------------------------------------------------------------------
# decompositions


@dataclass(frozen=True)
class VarianceBreakdown:
    total: float
    components: dict
    method: str


def variance_decomposition(science: ScienceTable, m: int, method: str = "auto", cap: int = 100_000) -> VarianceBreakdown:
    """Split Var(t_diff - SATE) into the SATT variance, the treated control-sum
    variance and twice their covariance.

    ``method`` is ``"enumerate"``, ``"closed_form"`` or ``"auto"`` (enumerate when
    C(N, m) <= ``cap``).
    """
    from . import randomization_oracle as oracle

    n = science.n
    if not 1 <= m <= n - 1:
        raise InvalidInput(f"need 1 <= m <= N-1, got m={m}")
    if method == "auto":
        method = "enumerate" if math.comb(n, m) <= cap else "closed_form"
    scale = n / (m * (n - m))
    if method == "enumerate":
        S = oracle.Statistic
        var_satt = oracle.exact_moments(science, m, S.SATT).variance
        var_y0 = scale**2 * oracle.exact_moments(science, m, S.Y0_TREATED_SUM).variance
        cov = 2 * scale * oracle.exact_cov(science, m, (S.SATT, S.Y0_TREATED_SUM))
        total = oracle.exact_moments(science, m, S.TDIFF_MINUS_SATE).variance
    elif method == "closed_form":
        mom = science_moments(science)
        var_satt = (1 / m - 1 / n) * mom.sigma_tau_sq
        var_y0 = scale * mom.sigma0_sq
        cov = 2 * (mom.cov01 - mom.sigma0_sq) / m
        total = float(sate_variance_formula(mom.sigma0_sq, mom.sigma1_sq, mom.cov01, n, m))
    else:
        raise InvalidInput(f"unknown method {method!r}")
    return VarianceBreakdown(
        total=total,
        components={"var_satt_term": var_satt, "var_y0_sum_term": var_y0, "covariance_term": cov},
        method=method,
    )


@dataclass(frozen=True)
class SuperPopulationDecomposition:
    var_tdiff: float
    var_sate: float
    var_tdiff_minus_sate: float
    sate_formula: float


def sp_decomposition(sigma0_sq: float, sigma1_sq: float, n: int, m: int, rho: Optional[float] = None) -> SuperPopulationDecomposition:
    """Super-population split: Var(t_diff) = Var(t_diff - SATE) + Var(SATE)."""
    if rho is None:
        raise RhoRequired("the variance of SATE needs the correlation of potential outcomes")
    if not -1.0 <= rho <= 1.0:
        raise RhoOutOfRange(f"rho must lie in [-1, 1], got {rho}")
    if not 1 <= m <= n - 1:
        raise InvalidInput(f"need 1 <= m <= N-1, got m={m}")
    cross = rho * math.sqrt(sigma0_sq * sigma1_sq)
    var_tdiff = sigma1_sq / m + sigma0_sq / (n - m)
    var_sate = (sigma0_sq + sigma1_sq - 2 * cross) / n
    return SuperPopulationDecomposition(
        var_tdiff=var_tdiff,
        var_sate=var_sate,
        var_tdiff_minus_sate=var_tdiff - var_sate,
        sate_formula=float(sate_variance_formula(sigma0_sq, sigma1_sq, cross, n, m)),
    )


# ---------------------------------------------------------------------------
# covariates


def covariate_adjust(obs: ObservedExperiment) -> ObservedExperiment:
    """Replace outcomes by least-squares residuals on the covariates ``obs.x``."""
    if obs.x is None:
        raise InvalidInput("no covariates to adjust for")
    x, y = obs.x, obs.y
    n, k = x.shape
    if n <= k or np.linalg.matrix_rank(x) < k:
        raise RankDeficient(f"covariate matrix ({n} x {k}) is not of full column rank")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    # exact fits leave rounding noise; snap it to zero so degeneracy is detected
    tol = max(n, k) * np.finfo(float).eps * max(1.0, float(np.max(np.abs(y))))
    resid[np.abs(resid) <= tol] = 0.0
    return ObservedExperiment(y=resid, t=obs.t, x=obs.x)
