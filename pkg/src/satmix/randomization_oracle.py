"""Exhaustive enumeration of complete-randomization assignments.

Every size-m subset of the N units is visited once in lexicographic order, and
moments of any recentered statistic are accumulated with compensated summation.
The results certify (or refute) the closed-form variances in
:mod:`satmix.estimators`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, Optional

import numpy as np

from ._numeric import ExactSum
from .core_types import ScienceTable, VarianceMode, science_moments
from .errors import EnumerationTooLarge, InvalidInput, UnknownFormula
from . import estimators as est

DEFAULT_CAP = 10**7
_CHUNK = 8192


class Statistic(str, Enum):
    TDIFF = "tdiff"
    TDIFF_MINUS_SATE = "tdiff_minus_sate"
    TDIFF_MINUS_SATT = "tdiff_minus_satt"
    TDIFF_MINUS_SATC = "tdiff_minus_satc"
    TDIFF_MINUS_MIX = "tdiff_minus_mix"
    SATT = "satt"
    SATC = "satc"
    Y0_TREATED_SUM = "y0_treated_sum"
    Y1_TREATED_SUM = "y1_treated_sum"


@dataclass(frozen=True)
class ExactMoments:
    statistic_id: Statistic
    mean: float
    variance: float
    n_assignments: int
    omega: Optional[float] = None


@dataclass(frozen=True)
class FormulaVerdict:
    formula_id: str
    exact_value: float
    formula_value: float
    relative_error: float
    mode: VarianceMode
    omega: Optional[float] = None

    def passed(self, tol: float) -> bool:
        return self.relative_error <= tol


def _check_size(n: int, m: int, cap: int) -> int:
    if not 1 <= m <= n - 1:
        raise InvalidInput(f"need 1 <= m <= N-1, got m={m}, N={n}")
    count = math.comb(n, m)
    if count > cap:
        raise EnumerationTooLarge(count, cap)
    return count


def enumerate_assignments(
    n: int, m: int, *, cap: int = DEFAULT_CAP, start: int = 0, stop: Optional[int] = None
) -> Iterator[np.ndarray]:
    """Yield 0/1 treatment vectors for every size-m subset, lexicographically.

    ``start``/``stop`` select a rank range so the stream can be partitioned.
    """
    _check_size(n, m, cap)
    for combo in itertools.islice(itertools.combinations(range(n), m), start, stop):
        t = np.zeros(n, dtype=np.int8)
        t[list(combo)] = 1
        yield t


def _index_chunks(n: int, m: int, chunk: int = _CHUNK) -> Iterator[np.ndarray]:
    combos = itertools.combinations(range(n), m)
    while True:
        block = list(itertools.islice(combos, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.intp).reshape(len(block), m)


class _Evaluator:
    """Vectorized statistic values for blocks of treated-index rows."""

    def __init__(self, science: ScienceTable, m: int):
        self.y0 = science.y0
        self.y1 = science.y1
        self.n = science.n
        self.m = m
        self.total0 = math.fsum(self.y0)
        self.total_tau = math.fsum(science.tau)
        self.sate = self.total_tau / self.n

    def __call__(self, idx: np.ndarray, stat: Statistic, omega: Optional[float]) -> np.ndarray:
        n, m = self.n, self.m
        s0t = self.y0[idx].sum(axis=1)
        s1t = self.y1[idx].sum(axis=1)
        if stat is Statistic.Y0_TREATED_SUM:
            return s0t
        if stat is Statistic.Y1_TREATED_SUM:
            return s1t
        tau_t = s1t - s0t
        satt = tau_t / m
        satc = (self.total_tau - tau_t) / (n - m)
        if stat is Statistic.SATT:
            return satt
        if stat is Statistic.SATC:
            return satc
        tdiff = s1t / m - (self.total0 - s0t) / (n - m)
        if stat is Statistic.TDIFF:
            return tdiff
        if stat is Statistic.TDIFF_MINUS_SATE:
            return tdiff - self.sate
        if stat is Statistic.TDIFF_MINUS_SATT:
            return tdiff - satt
        if stat is Statistic.TDIFF_MINUS_SATC:
            return tdiff - satc
        if omega is None:
            raise InvalidInput("TDIFF_MINUS_MIX needs omega")
        return tdiff - (omega * satt + (1 - omega) * satc)


def _mean(ev: _Evaluator, stat: Statistic, omega, count: int) -> float:
    acc = ExactSum()
    for idx in _index_chunks(ev.n, ev.m):
        acc.add_many(ev(idx, stat, omega))
    return acc.value / count


def exact_moments(
    science: ScienceTable,
    m: int,
    statistic: Statistic,
    *,
    omega: Optional[float] = None,
    cap: int = DEFAULT_CAP,
) -> ExactMoments:
    """Mean and variance of ``statistic`` over the uniform law on all assignments."""
    statistic = Statistic(statistic)
    count = _check_size(science.n, m, cap)
    ev = _Evaluator(science, m)
    mean = _mean(ev, statistic, omega, count)
    acc = ExactSum()
    for idx in _index_chunks(ev.n, m):
        d = ev(idx, statistic, omega) - mean
        acc.add_many(d * d)
    return ExactMoments(statistic, mean, acc.value / count, count, omega)


def exact_cov(
    science: ScienceTable,
    m: int,
    pair: tuple[Statistic, Statistic],
    *,
    omega: Optional[float] = None,
    cap: int = DEFAULT_CAP,
) -> float:
    a, b = (Statistic(s) for s in pair)
    count = _check_size(science.n, m, cap)
    ev = _Evaluator(science, m)
    ma = _mean(ev, a, omega, count)
    mb = _mean(ev, b, omega, count)
    acc = ExactSum()
    for idx in _index_chunks(ev.n, m):
        acc.add_many((ev(idx, a, omega) - ma) * (ev(idx, b, omega) - mb))
    return acc.value / count


# ---------------------------------------------------------------------------
# formula registry: id -> (exact quantity by enumeration, closed form)

S = Statistic


def _moments_args(science: ScienceTable, m: int):
    mom = science_moments(science)
    return mom.sigma0_sq, mom.sigma1_sq, mom.cov01, science.n, m


def _recentered(kind: str):
    def closed(science, m, mode, omega):
        s0, s1, c, n, m_ = _moments_args(science, m)
        return est.recentered_variance_formula(kind, s0, s1, c, n, m_, omega, mode)

    return closed


def _block(attr: str):
    def closed(science, m, mode, omega):
        return getattr(est.block_moments(*_moments_args(science, m), mode=mode), attr)

    return closed


def _var(stat):
    return lambda science, m, omega, cap: exact_moments(science, m, stat, omega=omega, cap=cap).variance


def _cov(a, b):
    return lambda science, m, omega, cap: exact_cov(science, m, (a, b), cap=cap)


def _mse_closed(science, m, mode, omega):
    mom = science_moments(science)
    return est.mse_sate_satt(mom.sigma_tau_sq, m, m / science.n)


def _mse_exact(science, m, omega, cap):
    mo = exact_moments(science, m, S.SATT, cap=cap)
    return mo.variance + (mo.mean - science.sate) ** 2


FORMULAS: dict[str, tuple[Callable, Callable, str]] = {
    "sate_variance": (_var(S.TDIFF_MINUS_SATE), _recentered("sate"), "Var(t_diff - SATE)"),
    "satt_variance": (_var(S.TDIFF_MINUS_SATT), _recentered("satt"), "Var(t_diff - SATT) = sigma0^2 k"),
    "satc_variance": (_var(S.TDIFF_MINUS_SATC), _recentered("satc"), "Var(t_diff - SATC) = sigma1^2 k"),
    "mix_variance": (_var(S.TDIFF_MINUS_MIX), _recentered("mix"), "Var(t_diff - (w SATT + (1-w) SATC))"),
    "var_satt": (_var(S.SATT), _block("var_satt"), "Var(SATT)"),
    "var_satc": (_var(S.SATC), _block("var_satc"), "Var(SATC)"),
    "cov_satt_satc": (_cov(S.SATT, S.SATC), _block("cov_satt_satc"), "Cov(SATT, SATC)"),
    "cov_satt_y0sum": (_cov(S.SATT, S.Y0_TREATED_SUM), _block("cov_satt_y0sum"), "Cov(SATT, sum Y(0) T)"),
    "cov_satc_y0sum": (_cov(S.SATC, S.Y0_TREATED_SUM), _block("cov_satc_y0sum"), "Cov(SATC, sum Y(0) T)"),
    "cov_y1sum_y0sum": (
        _cov(S.Y1_TREATED_SUM, S.Y0_TREATED_SUM),
        _block("cov_y1sum_y0sum"),
        "Cov(sum Y(1) T, sum Y(0) T)",
    ),
    "var_y0sum": (_var(S.Y0_TREATED_SUM), _block("var_y0sum"), "Var(sum Y(0) T)"),
    "mse_sate_satt": (_mse_exact, _mse_closed, "E[(SATT - SATE)^2] = (1-p)/m sigma_tau^2"),
}


def relative_error(exact: float, formula: float) -> float:
    """|formula - exact| / |exact|; 0 when both vanish, inf when only ``exact`` does."""
    if exact == 0.0:
        return 0.0 if formula == 0.0 else math.inf
    return abs(exact - formula) / abs(exact)


def verify_formula(
    science: ScienceTable,
    m: int,
    formula_id: str,
    mode: VarianceMode = VarianceMode.EXACT,
    *,
    omega: Optional[float] = None,
    cap: int = DEFAULT_CAP,
) -> FormulaVerdict:
    """Compare one closed form against its enumerated exact value."""
    try:
        exact_fn, closed_fn, _ = FORMULAS[formula_id]
    except KeyError:
        raise UnknownFormula(f"unknown formula id {formula_id!r}; known: {sorted(FORMULAS)}") from None
    if formula_id == "mix_variance" and omega is None:
        raise InvalidInput("mix_variance needs omega")
    mode = VarianceMode(mode)
    exact = float(exact_fn(science, m, omega, cap))
    closed = float(closed_fn(science, m, mode, omega))
    return FormulaVerdict(formula_id, exact, closed, relative_error(exact, closed), mode, omega)


def verify_all(
    science: ScienceTable,
    m: int,
    *,
    omegas=(0.0, 0.25, 0.5, 0.75, 1.0),
    modes=(VarianceMode.EXACT, VarianceMode.PAPER_ASYMPTOTIC),
    cap: int = DEFAULT_CAP,
) -> list[FormulaVerdict]:
    _check_size(science.n, m, cap)
    out = []
    for mode in modes:
        for fid in FORMULAS:
            if fid == "mix_variance":
                out.extend(verify_formula(science, m, fid, mode, omega=w, cap=cap) for w in omegas)
            else:
                out.append(verify_formula(science, m, fid, mode, cap=cap))
    return out
