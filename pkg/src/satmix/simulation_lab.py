"""Seeded Monte Carlo coverage studies.

Two-level design: draw a finite population (science table) from a data
generating process, then draw many complete-randomization assignments on it.
Streams are derived from one master seed with ``numpy.random.SeedSequence``
spawning and the counter-based Philox generator, so every (sample,
assignment-block) pair has its own independent stream and results do not depend
on execution order.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from ._numeric import ExactSum
from .bernoulli_design import bernoulli_satt_interval
from .core_types import (
    CoverageRecord,
    CoverageReport,
    EstimandKind,
    EstimandSpec,
    RhoAssumption,
    RhoKind,
    ScienceTable,
    VarianceMode,
    science_moments,
)
from .errors import DegenerateVariance, GroupTooSmall, InvalidInput, InvalidMarginals, NoControls
from .estimators import (
    DEGENERATE_MESSAGE,
    comonotone_correlation,
    normal_quantile,
    omega_star_formula,
    recentered_variance,
    recentered_variance_formula,
)


class DgpKind(str, Enum):
    RANDOM_COEFFICIENT = "random_coefficient"
    BINARY = "binary"
    TOBIT = "tobit"


class Coupling(str, Enum):
    MONOTONE = "monotone"
    INDEPENDENT = "independent"


@dataclass(frozen=True)
class DgpSpec:
    """Data generating process for one finite population of ``n`` units.

    * RANDOM_COEFFICIENT: Y(0) ~ N(10, 1), tau ~ N(0, sigma_tau^2), Y(1) = Y(0) + tau.
    * BINARY: Bernoulli marginals p0, p1 joined by ``coupling``; MONOTONE means
      no unit is harmed (Y(1) >= Y(0)).
    * TOBIT: Y(0) ~ N(0, 1), Y(1) = Y(0) + tau where Y(0) >= 0, else Y(0).
    """

    kind: DgpKind
    n: int = 1000
    seed: int = 0
    sigma_tau: Optional[float] = None
    p0: Optional[float] = None
    p1: Optional[float] = None
    coupling: Coupling = Coupling.MONOTONE
    tau: Optional[float] = None

    def __post_init__(self):
        kind = DgpKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "coupling", Coupling(self.coupling))
        if int(self.n) != self.n or self.n < 4:
            raise InvalidInput(f"n must be an integer >= 4, got {self.n}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInput("seed must be a 64-bit unsigned integer")
        if kind is DgpKind.RANDOM_COEFFICIENT:
            if self.sigma_tau is None or self.sigma_tau < 0:
                raise InvalidInput("random coefficient DGP needs sigma_tau >= 0")
        elif kind is DgpKind.BINARY:
            p0, p1 = self.p0, self.p1
            if p0 is None or p1 is None or not (0 <= p0 <= 0.5 and p0 < p1 <= 0.5):
                raise InvalidMarginals(f"need 0 <= p0 <= 1/2 and p0 < p1 <= 1/2, got p0={p0}, p1={p1}")
        elif self.tau is None or self.tau <= 0:
            raise InvalidInput("tobit DGP needs tau > 0")

    @classmethod
    def random_coefficient(cls, sigma_tau: float, n: int = 1000, seed: int = 0) -> "DgpSpec":
        return cls(DgpKind.RANDOM_COEFFICIENT, n=n, seed=seed, sigma_tau=sigma_tau)

    @classmethod
    def binary(cls, p0: float, p1: float, n: int = 1000, seed: int = 0, coupling=Coupling.MONOTONE) -> "DgpSpec":
        return cls(DgpKind.BINARY, n=n, seed=seed, p0=p0, p1=p1, coupling=coupling)

    @classmethod
    def tobit(cls, tau: float, n: int = 1000, seed: int = 0) -> "DgpSpec":
        return cls(DgpKind.TOBIT, n=n, seed=seed, tau=tau)

    @property
    def label(self) -> str:
        if self.kind is DgpKind.RANDOM_COEFFICIENT:
            return f"random_coefficient(sigma_tau={self.sigma_tau:g})"
        if self.kind is DgpKind.BINARY:
            return f"binary(p0={self.p0:g},p1={self.p1:g},{self.coupling.value})"
        return f"tobit(tau={self.tau:g})"


def _rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


def _binary_cells(dgp: DgpSpec) -> np.ndarray:
    """Probabilities of the (Y0, Y1) cells (0,0), (0,1), (1,0), (1,1)."""
    p0, p1 = dgp.p0, dgp.p1
    if dgp.coupling is Coupling.MONOTONE:
        cells = np.array([1 - p1, p1 - p0, 0.0, p0])
    else:
        cells = np.array([(1 - p0) * (1 - p1), (1 - p0) * p1, p0 * (1 - p1), p0 * p1])
    if np.any(cells < 0):
        raise InvalidMarginals(f"coupling {dgp.coupling.value} infeasible for p0={p0}, p1={p1}")
    return cells


def _draw(dgp: DgpSpec, rng: np.random.Generator) -> ScienceTable:
    n = dgp.n
    if dgp.kind is DgpKind.RANDOM_COEFFICIENT:
        y0 = rng.normal(10.0, 1.0, n)
        tau = rng.normal(0.0, 1.0, n) * dgp.sigma_tau
        return ScienceTable(y0=y0, y1=y0 + tau)
    if dgp.kind is DgpKind.TOBIT:
        y0 = rng.normal(0.0, 1.0, n)
        return ScienceTable(y0=y0, y1=np.where(y0 >= 0, y0 + dgp.tau, y0))
    cell = rng.choice(4, size=n, p=_binary_cells(dgp))
    return ScienceTable(y0=(cell >= 2).astype(float), y1=(cell % 2).astype(float))


def generate(dgp: DgpSpec) -> ScienceTable:
    """Deterministic science table for ``dgp`` (same seed, same table)."""
    return _draw(dgp, _rng(np.random.SeedSequence(int(dgp.seed))))


def tobit_variance_ratio(tau: float, sigma0: float = 1.0, mean0: float = 0.0) -> float:
    """Population sigma1^2 / sigma0^2 of the censored-effect model with normal Y(0).

    Var(Y0 + tau B) with B = 1[Y0 >= 0] and q = Pr(B = 1) is
    sigma0^2 + q tau (tau (1 - q) + 2 (E[Y0 | Y0 > 0] - E[Y0])).
    """
    a = -mean0 / sigma0
    q = stats.norm.sf(a)
    cond_mean = mean0 + sigma0 * stats.norm.pdf(a) / q
    return 1.0 + q * tau * (tau * (1 - q) + 2 * (cond_mean - mean0)) / sigma0**2


def binary_variance_ratio(p0: float, p1: float) -> float:
    return p1 * (1 - p1) / (p0 * (1 - p0))


# ---------------------------------------------------------------------------
# replication engine

DEFAULT_ESTIMANDS = (
    EstimandSpec.satt(),
    EstimandSpec.satc(),
    EstimandSpec.sate(RhoAssumption.neyman()),
    EstimandSpec.sate(RhoAssumption.one()),
    EstimandSpec.sate(RhoAssumption.empirical()),
    EstimandSpec.sate(RhoAssumption.true()),
    EstimandSpec.sato(RhoAssumption.one()),
)


@dataclass(frozen=True)
class ReplicationPlan:
    n_samples: int = 1000
    n_assignments: int = 1000
    p: float = 0.5
    alpha: float = 0.05
    estimands: tuple = DEFAULT_ESTIMANDS
    modes: tuple = (VarianceMode.EXACT,)

    def __post_init__(self):
        if self.n_samples < 1 or self.n_assignments < 1:
            raise InvalidInput("replication counts must be >= 1")
        if not 0.0 < self.p < 1.0:
            raise InvalidInput(f"p must lie in (0, 1), got {self.p}")
        normal_quantile(self.alpha)
        object.__setattr__(self, "estimands", tuple(self.estimands))
        object.__setattr__(self, "modes", tuple(VarianceMode(m) for m in self.modes))


def treated_count(n: int, p: float) -> int:
    m = int(round(p * n))
    if m < 2 or n - m < 2:
        raise InvalidInput(f"p={p} with n={n} leaves a group with fewer than 2 units")
    return m


def random_assignments(rng: np.random.Generator, n: int, m: int, count: int) -> np.ndarray:
    """``count`` x m array of treated unit indices, each row a uniform size-m subset."""
    keys = rng.random((count, n))
    return np.argpartition(keys, m - 1, axis=1)[:, :m] if m < n else np.tile(np.arange(n), (count, 1))


@dataclass
class AssignmentBlock:
    """Per-assignment realized quantities for a block of assignments on one table."""

    t_diff: np.ndarray
    satt: np.ndarray
    satc: np.ndarray
    s0sq: np.ndarray
    s1sq: np.ndarray
    treated_y1: np.ndarray
    control_y0: np.ndarray


def assignment_block(table: ScienceTable, treated_idx: np.ndarray) -> AssignmentBlock:
    n = table.n
    count, m = treated_idx.shape
    mask = np.zeros((count, n), dtype=bool)
    np.put_along_axis(mask, treated_idx, True, axis=1)
    # row-major order of the remaining units
    control_idx = np.nonzero(~mask)[1].reshape(count, n - m)
    y1t = table.y1[treated_idx]
    y0c = table.y0[control_idx]
    tau_t = (table.y1 - table.y0)[treated_idx].sum(axis=1)
    tau_total = math.fsum(table.tau)
    return AssignmentBlock(
        t_diff=y1t.mean(axis=1) - y0c.mean(axis=1),
        satt=tau_t / m,
        satc=(tau_total - tau_t) / (n - m),
        s0sq=y0c.var(axis=1, ddof=1),
        s1sq=y1t.var(axis=1, ddof=1),
        treated_y1=y1t,
        control_y0=y0c,
    )


def _cross(block: AssignmentBlock, rho: RhoAssumption, true_rho: Optional[float]) -> np.ndarray:
    root = np.sqrt(block.s0sq * block.s1sq)
    if rho.kind is RhoKind.TRUE:
        return (true_rho or 0.0) * root
    if rho.kind is RhoKind.EMPIRICAL:
        return comonotone_correlation(block.treated_y1, block.control_y0) * root
    return rho.cross(block.s0sq, block.s1sq)


def _omega(estimand: EstimandSpec, block: AssignmentBlock, cross, p: float):
    kind = estimand.kind
    if kind is EstimandKind.SATT:
        return 1.0
    if kind is EstimandKind.SATC:
        return 0.0
    if kind is EstimandKind.SATE:
        return p
    if kind is EstimandKind.MIX:
        return estimand.omega
    return omega_star_formula(block.s0sq, block.s1sq, cross, p)


class _Cell:
    __slots__ = ("n", "skipped", "cov_target", "cov_satt", "cov_satc", "cov_sate", "reject", "length")

    def __init__(self):
        self.n = self.skipped = 0
        self.cov_target = self.cov_satt = self.cov_satc = self.cov_sate = self.reject = 0
        self.length = ExactSum()

    def record(self, scenario: str, estimand: str, mode: str) -> CoverageRecord:
        n = self.n

        def rate(k):
            return k / n if n else float("nan")

        def se(k):
            c = rate(k)
            return math.sqrt(c * (1 - c) / n) if n else float("nan")

        return CoverageRecord(
            scenario=scenario,
            estimand=estimand,
            mode=mode,
            n_intervals=n,
            n_skipped=self.skipped,
            coverage_target=rate(self.cov_target),
            coverage_satt=rate(self.cov_satt),
            coverage_satc=rate(self.cov_satc),
            coverage_sate=rate(self.cov_sate),
            mean_length=self.length.value / n if n else float("nan"),
            reject_rate=rate(self.reject),
            se_coverage_target=se(self.cov_target),
            se_coverage_satt=se(self.cov_satt),
            se_coverage_sate=se(self.cov_sate),
            se_reject_rate=se(self.reject),
        )


def _accumulate(cells, plan: ReplicationPlan, table: ScienceTable, block: AssignmentBlock, z: float):
    n = table.n
    m = block.treated_y1.shape[1]
    p = m / n
    mom = science_moments(table)
    sate = mom.sate
    for estimand in plan.estimands:
        cross = _cross(block, estimand.rho, mom.rho) if estimand.needs_rho else np.zeros_like(block.s0sq)
        omega = _omega(estimand, block, cross, p)
        target = sate if estimand.kind is EstimandKind.SATE else omega * block.satt + (1 - omega) * block.satc
        for mode in plan.modes:
            var = recentered_variance_formula(estimand.kind, block.s0sq, block.s1sq, cross, n, m, omega, mode)
            ok = var > 0
            half = z * np.sqrt(np.where(ok, var, 0.0))
            lo, hi = block.t_diff - half, block.t_diff + half

            def inside(x):
                return int(np.count_nonzero(ok & (lo <= x) & (x <= hi)))

            cell = cells[(estimand.label, mode.value)]
            cell.n += int(np.count_nonzero(ok))
            cell.skipped += int(np.count_nonzero(~ok))
            cell.cov_target += inside(target)
            cell.cov_satt += inside(block.satt)
            cell.cov_satc += inside(block.satc)
            cell.cov_sate += inside(sate)
            cell.reject += int(np.count_nonzero(ok & ((lo > 0) | (hi < 0))))
            cell.length.add_many(2 * half[ok])


def run(dgp: DgpSpec, plan: ReplicationPlan, *, block_size: int = 2000) -> CoverageReport:
    """Coverage, length and rejection rates of every planned interval.

    Replications whose plug-in variance is not positive are counted in
    ``n_skipped`` and excluded from the rates.
    """
    m = treated_count(dgp.n, plan.p)
    z = normal_quantile(plan.alpha)
    cells = {(e.label, mode.value): _Cell() for e in plan.estimands for mode in plan.modes}
    root = np.random.SeedSequence(int(dgp.seed))
    for sample_seq in root.spawn(plan.n_samples):
        table_seq, assign_seq = sample_seq.spawn(2)
        table = _draw(dgp, _rng(table_seq))
        n_blocks = -(-plan.n_assignments // block_size)
        for b, block_seq in enumerate(assign_seq.spawn(n_blocks)):
            count = min(block_size, plan.n_assignments - b * block_size)
            idx = random_assignments(_rng(block_seq), dgp.n, m, count)
            _accumulate(cells, plan, table, assignment_block(table, idx), z)
    records = tuple(cells[key].record(dgp.label, *key) for key in cells)
    return CoverageReport(records=records, n_samples=plan.n_samples, n_assignments=plan.n_assignments, seed=int(dgp.seed))


def run_grid(dgps: Iterable[DgpSpec], plan: ReplicationPlan) -> CoverageReport:
    reports = [run(d, plan) for d in dgps]
    if not reports:
        raise InvalidInput("empty DGP grid")
    return CoverageReport(
        records=tuple(r for rep in reports for r in rep.records),
        n_samples=plan.n_samples,
        n_assignments=plan.n_assignments,
        seed=reports[0].seed,
    )


# ---------------------------------------------------------------------------
# normality


@dataclass(frozen=True)
class NormalityDiagnostic:
    ks_statistic: float
    p_value: float
    n_assignments: int


def standardized_statistics(
    table: ScienceTable,
    m: int,
    n_assignments: int,
    estimand: EstimandSpec = EstimandSpec.satt(),
    seed: int = 0,
    block_size: int = 10_000,
) -> np.ndarray:
    """(t_diff - estimand) / sd over sampled assignments, sd from the true table."""
    if estimand.needs_rho:
        estimand = dataclasses.replace(estimand, rho=RhoAssumption.true())
    var = recentered_variance(table, estimand, m=m, mode=VarianceMode.EXACT)
    if not var > 0:
        raise DegenerateVariance(DEGENERATE_MESSAGE)
    sd = math.sqrt(var)
    mom = science_moments(table)
    p = m / table.n
    out = []
    blocks = np.random.SeedSequence(int(seed)).spawn(-(-n_assignments // block_size))
    for b, seq in enumerate(blocks):
        count = min(block_size, n_assignments - b * block_size)
        blk = assignment_block(table, random_assignments(_rng(seq), table.n, m, count))
        if estimand.kind is EstimandKind.SATE:
            target = mom.sate
        else:
            cross = mom.cov01
            w = _omega(estimand, blk, cross, p) if estimand.kind is not EstimandKind.SATO else float(
                omega_star_formula(mom.sigma0_sq, mom.sigma1_sq, cross, p)
            )
            target = w * blk.satt + (1 - w) * blk.satc
        out.append((blk.t_diff - target) / sd)
    return np.concatenate(out)


def normality_diagnostic(
    source: Union[DgpSpec, ScienceTable],
    p: float,
    n_assignments: int,
    estimand: EstimandSpec = EstimandSpec.satt(),
    seed: int = 0,
) -> NormalityDiagnostic:
    """Kolmogorov-Smirnov distance of the standardized recentered statistic from N(0, 1)."""
    table = generate(source) if isinstance(source, DgpSpec) else source
    m = int(round(p * table.n))
    if not 1 <= m <= table.n - 1:
        raise InvalidInput(f"p={p} gives m={m} for N={table.n}")
    zs = standardized_statistics(table, m, n_assignments, estimand, seed)
    res = stats.kstest(zs, "norm")
    return NormalityDiagnostic(float(res.statistic), float(res.pvalue), int(zs.size))


def realized_identity_gap(table: ScienceTable, treated_idx: np.ndarray) -> np.ndarray:
    """|p SATT + (1 - p) SATC - SATE| per assignment row (should be rounding-level)."""
    blk = assignment_block(table, treated_idx)
    p = treated_idx.shape[1] / table.n
    return np.abs(p * blk.satt + (1 - p) * blk.satc - table.sate)


def grid(kind: DgpKind, values: Sequence[float], n: int, seed: int, **extra) -> list[DgpSpec]:
    """One DGP per parameter value (sigma_tau for random coefficient, tau for tobit)."""
    kind = DgpKind(kind)
    if kind is DgpKind.RANDOM_COEFFICIENT:
        return [DgpSpec.random_coefficient(v, n=n, seed=seed) for v in values]
    if kind is DgpKind.TOBIT:
        return [DgpSpec.tobit(v, n=n, seed=seed) for v in values]
    return [DgpSpec.binary(extra["p0"], v, n=n, seed=seed, coupling=extra.get("coupling", Coupling.MONOTONE)) for v in values]


# ---------------------------------------------------------------------------
# Bernoulli assignment


@dataclass(frozen=True)
class BernoulliCoverage:
    n_replications: int
    n_intervals: int
    n_degenerate_m: int
    n_degenerate_variance: int
    coverage: float
    se_coverage: float
    mean_half_width: float


def bernoulli_coverage(
    table: ScienceTable,
    p: float,
    n_replications: int,
    alpha: float = 0.05,
    seed: int = 0,
    *,
    literal: bool = False,
) -> BernoulliCoverage:
    """Coverage of realized SATT by the Bernoulli-design interval.

    Each replication assigns every unit independently with probability ``p``.
    Draws with m in {0, N} (or too few controls) and draws whose variance
    estimate is zero are counted and excluded.
    """
    if not 0.0 < p < 1.0:
        raise InvalidInput(f"p must lie in (0, 1), got {p}")
    degenerate_m = degenerate_var = covered = 0
    half = ExactSum()
    tau = table.tau
    for seq in np.random.SeedSequence(int(seed)).spawn(n_replications):
        t = (_rng(seq).random(table.n) < p).astype(np.int8)
        m = int(t.sum())
        if m == 0 or m == table.n:
            degenerate_m += 1
            continue
        try:
            res = bernoulli_satt_interval(table.observe(t), alpha, literal=literal)
        except (GroupTooSmall, NoControls):
            degenerate_m += 1
            continue
        except DegenerateVariance:
            degenerate_var += 1
            continue
        satt = math.fsum(tau[t == 1]) / m
        covered += res.covers(satt)
        half.add(res.half_width)
    n = n_replications - degenerate_m - degenerate_var
    cov = covered / n if n else float("nan")
    return BernoulliCoverage(
        n_replications=n_replications,
        n_intervals=n,
        n_degenerate_m=degenerate_m,
        n_degenerate_variance=degenerate_var,
        coverage=cov,
        se_coverage=math.sqrt(cov * (1 - cov) / n) if n else float("nan"),
        mean_half_width=half.value / n if n else float("nan"),
    )
