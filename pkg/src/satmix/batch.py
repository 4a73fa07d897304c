"""Analyze many experiments from their aggregate summary statistics.

Each row of a batch file is one (experiment, outcome) pair with
N, m, group means and group sample variances. Every row gets a fixed panel of
intervals; rows that cannot be analyzed are quarantined with a reason instead
of aborting the batch. Aggregates are integer counts and exactly rounded sums,
so they do not depend on row order.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from ._numeric import ExactSum
from .core_types import EstimandSpec, ExperimentSummary, IntervalResult, RhoAssumption, VarianceMode
from .errors import ParseError, SatmixError
from .estimators import interval
from .serialization import PathOrText, iter_records, parse_int, parse_real

BATCH_COLUMNS = ("experiment_id", "outcome_id", "N", "m", "mean1", "mean0", "s1sq", "s0sq")

PANEL: tuple[tuple[str, EstimandSpec], ...] = (
    ("sate_neyman", EstimandSpec.sate(RhoAssumption.neyman())),
    ("sate_rho1", EstimandSpec.sate(RhoAssumption.one())),
    ("satt", EstimandSpec.satt()),
    ("satc", EstimandSpec.satc()),
    ("sato_rho-1", EstimandSpec.sato(RhoAssumption.known(-1.0))),
    ("sato_rho0", EstimandSpec.sato(RhoAssumption.known(0.0))),
    ("sato_rho1", EstimandSpec.sato(RhoAssumption.known(1.0))),
)
PANEL_NAMES = tuple(name for name, _ in PANEL)

# upper edges of the variance-ratio (s1sq / s0sq) bins; the last bin is open
RATIO_EDGES = (0.5, 0.8, 1.0, 1.25, 1.5, 2.0, 3.0, 5.0)


@dataclass(frozen=True)
class BatchRow:
    experiment_id: str
    outcome_id: str
    n: int
    m: int
    mean1: float
    mean0: float
    s1sq: float
    s0sq: float

    def summary(self) -> ExperimentSummary:
        return ExperimentSummary(
            n=self.n, m=self.m, mean1=self.mean1, mean0=self.mean0, s1sq=self.s1sq, s0sq=self.s0sq
        )

    @classmethod
    def from_record(cls, line: int, rec: dict) -> "BatchRow":
        return cls(
            experiment_id=(rec.get("experiment_id") or "").strip(),
            outcome_id=(rec.get("outcome_id") or "").strip(),
            n=parse_int(rec.get("N"), line, "N"),
            m=parse_int(rec.get("m"), line, "m"),
            mean1=parse_real(rec.get("mean1"), line, "mean1"),
            mean0=parse_real(rec.get("mean0"), line, "mean0"),
            s1sq=parse_real(rec.get("s1sq"), line, "s1sq"),
            s0sq=parse_real(rec.get("s0sq"), line, "s0sq"),
        )


@dataclass(frozen=True)
class RowResult:
    """Panel for one analyzable row; ``skipped`` maps interval name to error code."""

    line: int
    row: BatchRow
    intervals: dict
    skipped: dict
    variance_ratio: float
    length_gain: Optional[float]

    @property
    def rejections(self) -> dict:
        return {name: r.rejects_zero for name, r in self.intervals.items()}


@dataclass(frozen=True)
class Quarantined:
    line: int
    experiment_id: str
    outcome_id: str
    code: str
    reason: str


def analyze_row(line: int, rec: dict, alpha: float = 0.05, mode: VarianceMode = VarianceMode.EXACT):
    """Return a ``RowResult`` or a ``Quarantined`` record for one raw CSV row.

    A row is quarantined when it cannot be parsed or violates the summary
    invariants. Individual intervals that are degenerate for a valid row are
    listed in ``RowResult.skipped`` instead.
    """
    ids = ((rec.get("experiment_id") or "").strip(), (rec.get("outcome_id") or "").strip())
    try:
        if None in rec:
            raise ParseError(f"line {line}: more fields than header columns")
        row = BatchRow.from_record(line, rec)
        summary = row.summary()
    except SatmixError as exc:
        return Quarantined(line, *ids, code=exc.code, reason=str(exc))
    intervals, skipped = {}, {}
    for name, spec in PANEL:
        try:
            intervals[name] = interval(summary, spec, alpha, mode)
        except SatmixError as exc:
            skipped[name] = exc.code
    ratio = row.s1sq / row.s0sq if row.s0sq > 0 else math.inf
    gain = None
    if "satt" in intervals and "sate_neyman" in intervals:
        gain = 1.0 - intervals["satt"].half_width / intervals["sate_neyman"].half_width
    return RowResult(line, row, intervals, skipped, ratio, gain)


def ratio_bin(ratio: float) -> int:
    for i, edge in enumerate(RATIO_EDGES):
        if ratio <= edge:
            return i
    return len(RATIO_EDGES)


def bin_label(i: int) -> str:
    lo = 0.0 if i == 0 else RATIO_EDGES[i - 1]
    hi = RATIO_EDGES[i] if i < len(RATIO_EDGES) else math.inf
    return f"({lo:g}, {hi:g}]" if math.isfinite(hi) else f"({lo:g}, inf)"


def _counter() -> dict:
    return dict.fromkeys(PANEL_NAMES, 0)


@dataclass
class _Bin:
    n: int = 0
    n_intervals: dict = field(default_factory=_counter)
    rejections: dict = field(default_factory=_counter)
    n_gain: int = 0
    gain: ExactSum = field(default_factory=ExactSum)
    ratio: ExactSum = field(default_factory=ExactSum)

    def add(self, r: RowResult) -> None:
        self.n += 1
        for name, rejected in r.rejections.items():
            self.n_intervals[name] += 1
            self.rejections[name] += int(rejected)
        if r.length_gain is not None:
            self.n_gain += 1
            self.gain.add(r.length_gain)
            self.ratio.add(r.variance_ratio)

    def merge(self, other: "_Bin") -> None:
        self.n += other.n
        self.n_gain += other.n_gain
        for k in PANEL_NAMES:
            self.n_intervals[k] += other.n_intervals[k]
            self.rejections[k] += other.rejections[k]
        self.gain.merge(other.gain)
        self.ratio.merge(other.ratio)

    def rates(self) -> dict:
        return {k: (self.rejections[k] / c if c else float("nan")) for k, c in self.n_intervals.items()}

    def mean(self, acc: ExactSum) -> float:
        return acc.value / self.n_gain if self.n_gain else float("nan")


class BatchAggregator:
    """Order-independent accumulator of row results."""

    def __init__(self):
        self.n_rows = 0
        self.total = _Bin()
        self.bins = [_Bin() for _ in range(len(RATIO_EDGES) + 1)]
        self.quarantined: list[Quarantined] = []
        self.skipped = _counter()

    def add(self, result) -> None:
        self.n_rows += 1
        if isinstance(result, Quarantined):
            self.quarantined.append(result)
            return
        self.total.add(result)
        self.bins[ratio_bin(result.variance_ratio)].add(result)
        for name in result.skipped:
            self.skipped[name] += 1

    def merge(self, other: "BatchAggregator") -> None:
        self.n_rows += other.n_rows
        self.total.merge(other.total)
        for a, b in zip(self.bins, other.bins):
            a.merge(b)
        self.quarantined.extend(other.quarantined)
        for k, v in other.skipped.items():
            self.skipped[k] += v

    def report(self) -> "BatchReport":
        table = tuple(
            BinSummary(
                label=bin_label(i),
                n=b.n,
                mean_variance_ratio=b.mean(b.ratio),
                mean_length_gain=b.mean(b.gain),
                rejection_rates=b.rates(),
            )
            for i, b in enumerate(self.bins)
        )
        return BatchReport(
            n_rows=self.n_rows,
            n_analyzed=self.total.n,
            rejection_rates=self.total.rates(),
            n_intervals=dict(self.total.n_intervals),
            skipped_intervals=dict(self.skipped),
            mean_length_gain=self.total.mean(self.total.gain),
            bins=table,
            quarantined=tuple(sorted(self.quarantined, key=lambda q: q.line)),
        )


@dataclass(frozen=True)
class BinSummary:
    label: str
    n: int
    mean_variance_ratio: float
    mean_length_gain: float
    rejection_rates: dict


@dataclass(frozen=True)
class BatchReport:
    n_rows: int
    n_analyzed: int
    rejection_rates: dict
    n_intervals: dict
    skipped_intervals: dict
    mean_length_gain: float
    bins: tuple
    quarantined: tuple

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_analyzed": self.n_analyzed,
            "n_quarantined": len(self.quarantined),
            "rejection_rates": self.rejection_rates,
            "n_intervals": self.n_intervals,
            "skipped_intervals": self.skipped_intervals,
            "mean_length_gain_satt_vs_sate_neyman": self.mean_length_gain,
            "variance_ratio_bins": [
                {
                    "bin": b.label,
                    "n": b.n,
                    "mean_variance_ratio": b.mean_variance_ratio,
                    "mean_length_gain": b.mean_length_gain,
                    "rejection_rates": b.rejection_rates,
                }
                for b in self.bins
            ],
            "quarantined": [
                {"line": q.line, "experiment_id": q.experiment_id, "outcome_id": q.outcome_id, "code": q.code, "reason": q.reason}
                for q in self.quarantined
            ],
        }


ROW_HEADER = ["line", "experiment_id", "outcome_id", "N", "m", "t_diff", "variance_ratio", "length_gain"] + [
    f"{name}_{col}" for name in PANEL_NAMES for col in ("lower", "upper", "reject")
]


def row_fields(r: RowResult) -> list:
    out = [r.line, r.row.experiment_id, r.row.outcome_id, r.row.n, r.row.m, r.row.mean1 - r.row.mean0, r.variance_ratio, r.length_gain]
    for name in PANEL_NAMES:
        iv: Optional[IntervalResult] = r.intervals.get(name)
        out += [iv.lower, iv.upper, iv.rejects_zero] if iv else [None, None, None]
    return out


def run_batch(
    src: PathOrText,
    *,
    alpha: float = 0.05,
    mode: VarianceMode = VarianceMode.EXACT,
    workers: int = 1,
    chunk_size: int = 1024,
    on_result: Optional[Callable[[object], None]] = None,
) -> BatchReport:
    """Stream a batch CSV through the interval panel.

    Rows are read and analyzed ``chunk_size`` at a time, so memory stays bounded.
    ``on_result`` receives each ``RowResult`` or ``Quarantined`` in input order.
    """
    agg = BatchAggregator()
    records = iter_records(src, BATCH_COLUMNS)

    def analyze(item):
        return analyze_row(item[0], item[1], alpha, mode)

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for chunk in _chunks(records, chunk_size):
            results = pool.map(analyze, chunk) if pool else map(analyze, chunk)
            for res in results:
                agg.add(res)
                if on_result is not None:
                    on_result(res)
    finally:
        if pool:
            pool.shutdown()
    return agg.report()


def aggregate(results: Iterable) -> BatchReport:
    agg = BatchAggregator()
    for r in results:
        agg.add(r)
    return agg.report()


def _chunks(it: Iterator, size: int) -> Iterator[list]:
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield block

