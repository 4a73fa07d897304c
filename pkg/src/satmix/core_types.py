"""Domain objects for finite-population randomization inference.

All objects are immutable after construction; array fields are stored as
read-only copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from ._numeric import fmean, sample_covariance, sample_variance
from .errors import GroupTooSmall, InvalidInput, RhoOutOfRange, RhoRequired, RhoUndefined


def _frozen(values, name: str, *, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise InvalidInput(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains non-finite values")
    arr.setflags(write=False)
    return arr


class VarianceMode(str, Enum):
    """EXACT uses finite-N covariances; PAPER_ASYMPTOTIC keeps the (N-1) forms."""

    EXACT = "exact"
    PAPER_ASYMPTOTIC = "paper"


class SamplingModel(str, Enum):
    FINITE = "finite"
    SUPER_POPULATION = "super_population"


class EstimandKind(str, Enum):
    SATE = "sate"
    SATT = "satt"
    SATC = "satc"
    MIX = "mix"
    SATO = "sato"


class RhoKind(str, Enum):
    KNOWN = "known"
    BOUND = "bound"
    NEYMAN = "neyman"
    RHO_ONE = "one"
    # comonotone bound estimated from unit-level data
    EMPIRICAL = "empirical"
    # simulation only: the correlation of the science table itself
    TRUE = "true"


@dataclass(frozen=True)
class ScienceTable:
    """Both potential outcomes for every unit of a finite population."""

    y0: np.ndarray
    y1: np.ndarray

    def __post_init__(self):
        y0 = _frozen(self.y0, "y0")
        y1 = _frozen(self.y1, "y1")
        if y0.shape != y1.shape:
            raise InvalidInput(f"y0 and y1 differ in length: {y0.size} != {y1.size}")
        if y0.size < 2:
            raise InvalidInput("a science table needs at least 2 units")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)

    @property
    def n(self) -> int:
        return int(self.y0.size)

    @property
    def tau(self) -> np.ndarray:
        return self.y1 - self.y0

    @property
    def sate(self) -> float:
        return fmean(self.tau)

    def observe(self, t) -> "ObservedExperiment":
        """Observed data under assignment ``t`` (SUTVA: Y_i = Y_i(T_i))."""
        t = np.asarray(t, dtype=bool)
        return ObservedExperiment(y=np.where(t, self.y1, self.y0), t=t)

    def moments(self) -> "ScienceMoments":
        return science_moments(self)


@dataclass(frozen=True)
class ScienceMoments:
    n: int
    sigma0_sq: float
    sigma1_sq: float
    sigma_tau_sq: float
    cov01: float
    rho: Optional[float]
    sate: float

    def require_rho(self) -> float:
        if self.rho is None:
            raise RhoUndefined("correlation undefined: one potential-outcome column is constant")
        return self.rho


def science_moments(s: ScienceTable) -> ScienceMoments:
    """Population moments, all with the (N - 1) denominator.

    ``rho`` is ``None`` when either column is constant.
    """
    s0 = sample_variance(s.y0)
    s1 = sample_variance(s.y1)
    c = sample_covariance(s.y0, s.y1)
    rho = None
    if s0 > 0 and s1 > 0:
        rho = min(1.0, max(-1.0, c / math.sqrt(s0 * s1)))
    return ScienceMoments(
        n=s.n,
        sigma0_sq=s0,
        sigma1_sq=s1,
        sigma_tau_sq=sample_variance(s.tau),
        cov01=c,
        rho=rho,
        sate=s.sate,
    )


@dataclass(frozen=True)
class ObservedExperiment:
    """Observed outcomes ``y``, treatment indicators ``t`` and optional covariates ``x``."""

    y: np.ndarray
    t: np.ndarray
    x: Optional[np.ndarray] = None

    def __post_init__(self):
        y = _frozen(self.y, "y")
        t_raw = np.asarray(self.t)
        if t_raw.shape != y.shape:
            raise InvalidInput(f"y and t differ in length: {y.size} != {t_raw.size}")
        if t_raw.dtype != bool:
            if not np.all((t_raw == 0) | (t_raw == 1)):
                raise InvalidInput("treatment indicators must be 0 or 1")
        t = t_raw.astype(bool)
        t.setflags(write=False)
        m = int(t.sum())
        if not 1 <= m <= y.size - 1:
            raise GroupTooSmall(f"need at least one treated and one control unit, got m={m}, N={y.size}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        if self.x is not None:
            x = np.asarray(self.x, dtype=float)
            x = _frozen(x[:, None] if x.ndim == 1 else x, "x", ndim=2)
            if x.shape[0] != y.size:
                raise InvalidInput(f"x has {x.shape[0]} rows for {y.size} units")
            object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def m(self) -> int:
        return int(self.t.sum())

    @property
    def treated(self) -> np.ndarray:
        return self.y[self.t]

    @property
    def control(self) -> np.ndarray:
        return self.y[~self.t]


@dataclass(frozen=True)
class ExperimentSummary:
    """Aggregate sufficient statistics of a two-arm experiment.

    ``s1sq`` and ``s0sq`` are within-group sample variances with group-size-minus-one
    denominators.
    """

    n: int
    m: int
    mean1: float
    mean0: float
    s1sq: float
    s0sq: float

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m:
            raise InvalidInput("N and m must be integers")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        if not 1 <= self.m <= self.n - 1:
            raise GroupTooSmall(f"need 1 <= m <= N-1, got m={self.m}, N={self.n}")
        for name in ("mean1", "mean0", "s1sq", "s0sq"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise InvalidInput(f"{name} is not finite")
            object.__setattr__(self, name, v)
        if self.s1sq < 0 or self.s0sq < 0:
            raise InvalidInput("group variances must be nonnegative")

    @property
    def p(self) -> float:
        return self.m / self.n

    @property
    def t_diff(self) -> float:
        return self.mean1 - self.mean0

    @property
    def s1(self) -> float:
        return math.sqrt(self.s1sq)

    @property
    def s0(self) -> float:
        return math.sqrt(self.s0sq)


def summarize(obs: ObservedExperiment) -> ExperimentSummary:
    if obs.m < 2 or obs.n - obs.m < 2:
        raise GroupTooSmall(
            f"each group needs at least 2 units for a sample variance (m={obs.m}, N-m={obs.n - obs.m})"
        )
    treated, control = obs.treated, obs.control
    return ExperimentSummary(
        n=obs.n,
        m=obs.m,
        mean1=fmean(treated),
        mean0=fmean(control),
        s1sq=sample_variance(treated),
        s0sq=sample_variance(control),
    )


@dataclass(frozen=True)
class RhoAssumption:
    """What is assumed about the unidentified correlation of potential outcomes."""

    kind: RhoKind = RhoKind.NEYMAN
    value: Optional[float] = None

    def __post_init__(self):
        kind = RhoKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in (RhoKind.KNOWN, RhoKind.BOUND):
            if self.value is None:
                raise InvalidInput(f"rho assumption {kind.value} needs a value")
            v = float(self.value)
            if not -1.0 <= v <= 1.0:
                raise RhoOutOfRange(f"rho must lie in [-1, 1], got {v}")
            object.__setattr__(self, "value", v)
        elif self.value is not None:
            raise InvalidInput(f"rho assumption {kind.value} takes no value")

    @classmethod
    def known(cls, rho: float) -> "RhoAssumption":
        return cls(RhoKind.KNOWN, rho)

    @classmethod
    def bound(cls, rho_star: float) -> "RhoAssumption":
        return cls(RhoKind.BOUND, rho_star)

    @classmethod
    def neyman(cls) -> "RhoAssumption":
        return cls(RhoKind.NEYMAN)

    @classmethod
    def one(cls) -> "RhoAssumption":
        return cls(RhoKind.RHO_ONE)

    @classmethod
    def empirical(cls) -> "RhoAssumption":
        return cls(RhoKind.EMPIRICAL)

    @classmethod
    def true(cls) -> "RhoAssumption":
        return cls(RhoKind.TRUE)

    @property
    def fixed_value(self) -> Optional[float]:
        """The numeric correlation implied without looking at data, if any.

        NEYMAN implies no correlation; it drops the treatment-effect variance
        term altogether (see ``cross``).
        """
        if self.kind in (RhoKind.KNOWN, RhoKind.BOUND):
            return self.value
        if self.kind is RhoKind.RHO_ONE:
            return 1.0
        return None

    def cross(self, s0sq, s1sq):
        """Assumed Cov(Y(0), Y(1)) given the two variances, or None if data-dependent.

        NEYMAN returns (s0sq + s1sq) / 2, which sets sigma_tau^2 to zero and turns
        the SATE variance into s1sq/m + s0sq/(N - m). Broadcasts over arrays.
        """
        if self.kind is RhoKind.NEYMAN:
            return (s0sq + s1sq) / 2
        v = self.fixed_value
        return None if v is None else v * np.sqrt(s0sq * s1sq)

    @property
    def label(self) -> str:
        if self.value is None:
            return self.kind.value
        return f"{self.kind.value}:{self.value:g}"


@dataclass(frozen=True)
class EstimandSpec:
    """A member of the family omega * SATT + (1 - omega) * SATC plus its rho assumption.

    SATE is the member with omega = p; SATO uses the variance-minimizing omega.
    """

    kind: EstimandKind
    omega: Optional[float] = None
    rho: RhoAssumption = field(default_factory=RhoAssumption.neyman)
    sampling: SamplingModel = SamplingModel.FINITE

    def __post_init__(self):
        kind = EstimandKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "sampling", SamplingModel(self.sampling))
        if kind is EstimandKind.MIX:
            if self.omega is None or not 0.0 <= float(self.omega) <= 1.0:
                raise InvalidInput(f"mix weight must lie in [0, 1], got {self.omega}")
            object.__setattr__(self, "omega", float(self.omega))
        elif self.omega is not None:
            raise InvalidInput(f"{kind.value} takes no explicit weight")
        if kind is EstimandKind.SATO and self.rho.kind is RhoKind.NEYMAN:
            raise RhoRequired("sato needs a correlation value or bound; neyman supplies none")

    @classmethod
    def sate(cls, rho: RhoAssumption | None = None, **kw) -> "EstimandSpec":
        return cls(EstimandKind.SATE, rho=rho or RhoAssumption.neyman(), **kw)

    @classmethod
    def satt(cls, **kw) -> "EstimandSpec":
        return cls(EstimandKind.SATT, **kw)

    @classmethod
    def satc(cls, **kw) -> "EstimandSpec":
        return cls(EstimandKind.SATC, **kw)

    @classmethod
    def mix(cls, omega: float, rho: RhoAssumption | None = None, **kw) -> "EstimandSpec":
        return cls(EstimandKind.MIX, omega=omega, rho=rho or RhoAssumption.neyman(), **kw)

    @classmethod
    def sato(cls, rho: RhoAssumption | None = None, **kw) -> "EstimandSpec":
        return cls(EstimandKind.SATO, rho=rho or RhoAssumption.one(), **kw)

    @property
    def needs_rho(self) -> bool:
        return self.kind in (EstimandKind.SATE, EstimandKind.MIX, EstimandKind.SATO)

    @property
    def label(self) -> str:
        if self.kind is EstimandKind.MIX:
            base = f"mix:{self.omega:g}"
        else:
            base = self.kind.value
        if self.needs_rho:
            base += f"[rho={self.rho.label}]"
        if self.sampling is SamplingModel.SUPER_POPULATION:
            base += "[sp]"
        return base


@dataclass(frozen=True)
class IntervalResult:
    """A normal-theory interval ``center +/- half_width``.

    ``omega`` is the resolved weight on SATT of the targeted estimand.
    """

    estimand: EstimandSpec
    center: float
    half_width: float
    level: float
    variance: float
    variance_mode: VarianceMode
    omega: Optional[float] = None

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    @property
    def rejects_zero(self) -> bool:
        return not self.covers(0.0)


@dataclass(frozen=True)
class CoverageRecord:
    """Aggregated Monte Carlo results for one (scenario, estimand, mode) cell."""

    scenario: str
    estimand: str
    mode: str
    n_intervals: int
    n_skipped: int
    coverage_target: float
    coverage_satt: float
    coverage_satc: float
    coverage_sate: float
    mean_length: float
    reject_rate: float
    se_coverage_target: float
    se_coverage_satt: float
    se_coverage_sate: float
    se_reject_rate: float


@dataclass(frozen=True)
class CoverageReport:
    records: tuple[CoverageRecord, ...]
    n_samples: int
    n_assignments: int
    seed: int

    def find(self, scenario: str, estimand: str, mode: str = "exact") -> CoverageRecord:
        for r in self.records:
            if r.scenario == scenario and r.estimand == estimand and r.mode == mode:
                return r
        raise KeyError((scenario, estimand, mode))
