"""CSV ingestion and JSON/CSV output.

CSV dialect: comma separated, header row required, '.' decimal point, UTF-8.
Parse errors carry 1-based line numbers (the header is line 1). JSON floats
use Python's shortest round-trip repr and CSV floats 17 significant digits, so
re-reading either reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Optional, Union

import numpy as np

from .core_types import (
    CoverageReport,
    EstimandKind,
    EstimandSpec,
    IntervalResult,
    ObservedExperiment,
    RhoAssumption,
    RhoKind,
    SamplingModel,
    ScienceTable,
    VarianceMode,
)
from .errors import ParseError, SatmixError

PathOrText = Union[str, Path, IO[str]]


# ---------------------------------------------------------------------------
# CSV input


def _open(src: PathOrText):
    if hasattr(src, "read"):
        return src, False
    return open(src, newline="", encoding="utf-8"), True


def _reader(fh) -> tuple[csv.DictReader, list[str]]:
    reader = csv.DictReader(fh)
    if reader.fieldnames is None:
        raise ParseError("line 1: empty input, header row required")
    names = [f.strip() for f in reader.fieldnames]
    if len(set(names)) != len(names):
        raise ParseError("line 1: duplicate column names in header")
    reader.fieldnames = names
    return reader, names


def parse_real(text: Optional[str], line: int, column: str) -> float:
    if text is None:
        raise ParseError(f"line {line}: missing value for column '{column}'")
    try:
        value = float(text.strip())
    except ValueError:
        raise ParseError(f"line {line}, column '{column}': cannot parse {text!r} as a real number") from None
    if not math.isfinite(value):
        raise ParseError(f"line {line}, column '{column}': non-finite value {text!r}")
    return value


def parse_int(text: Optional[str], line: int, column: str) -> int:
    value = parse_real(text, line, column)
    if value != int(value):
        raise ParseError(f"line {line}, column '{column}': expected an integer, got {text!r}")
    return int(value)


def _check_extra(row: dict, line: int):
    if None in row:
        raise ParseError(f"line {line}: more fields than header columns")


def iter_records(src: PathOrText, required: Iterable[str]) -> Iterator[tuple[int, dict]]:
    """Yield ``(line_number, row_dict)`` lazily, after checking the header."""
    fh, owned = _open(src)
    try:
        reader, names = _reader(fh)
        missing = [c for c in required if c not in names]
        if missing:
            raise ParseError(f"line 1: missing required column(s) {', '.join(missing)}")
        for row in reader:
            yield reader.line_num, row
    finally:
        if owned:
            fh.close()


def read_observed_csv(src: PathOrText) -> ObservedExperiment:
    """Unit-level data: columns ``y``, ``t`` (0/1) and optional ``x1..xp``."""
    ys, ts, xs = [], [], []
    xcols: Optional[list[str]] = None
    for line, row in iter_records(src, ("y", "t")):
        _check_extra(row, line)
        if xcols is None:
            xcols = sorted((c for c in row if c.startswith("x") and c[1:].isdigit()), key=lambda c: int(c[1:]))
        ys.append(parse_real(row["y"], line, "y"))
        t = parse_real(row["t"], line, "t")
        if t not in (0.0, 1.0):
            raise ParseError(f"line {line}, column 't': treatment must be 0 or 1, got {row['t']!r}")
        ts.append(int(t))
        if xcols:
            xs.append([parse_real(row[c], line, c) for c in xcols])
    if not ys:
        raise ParseError("line 2: no data rows")
    return ObservedExperiment(y=ys, t=ts, x=xs if xcols else None)


def read_science_csv(src: PathOrText) -> ScienceTable:
    """Potential-outcome table: columns ``y0``, ``y1``."""
    y0, y1 = [], []
    for line, row in iter_records(src, ("y0", "y1")):
        _check_extra(row, line)
        y0.append(parse_real(row["y0"], line, "y0"))
        y1.append(parse_real(row["y1"], line, "y1"))
    if len(y0) < 2:
        raise ParseError("need at least 2 data rows")
    return ScienceTable(y0=y0, y1=y1)


# ---------------------------------------------------------------------------
# estimand / rho strings


def parse_rho(text: str) -> RhoAssumption:
    """``neyman | one | empirical | bound:<r> | known:<r>``."""
    text = text.strip().lower()
    head, _, arg = text.partition(":")
    if head in ("neyman", "one", "empirical") and not arg:
        return {"neyman": RhoAssumption.neyman, "one": RhoAssumption.one, "empirical": RhoAssumption.empirical}[head]()
    if head in ("bound", "known") and arg:
        try:
            value = float(arg)
        except ValueError:
            raise ParseError(f"cannot parse rho value {arg!r}") from None
        return RhoAssumption(RhoKind(head), value)
    raise ParseError(f"unknown rho assumption {text!r}; expected neyman, one, empirical, bound:<r> or known:<r>")


def parse_estimand(text: str, rho: Optional[RhoAssumption] = None) -> EstimandSpec:
    """``sate | satt | satc | sato | mix:<w>``, optionally suffixed ``@<rho>``."""
    text = text.strip().lower()
    text, _, rho_text = text.partition("@")
    if rho_text:
        rho = parse_rho(rho_text)
    head, _, arg = text.partition(":")
    if head == "mix":
        try:
            omega = float(arg)
        except ValueError:
            raise ParseError(f"cannot parse mix weight {arg!r}") from None
        return EstimandSpec.mix(omega, rho)
    if arg or head not in ("sate", "satt", "satc", "sato"):
        raise ParseError(f"unknown estimand {text!r}; expected sate, satt, satc, sato or mix:<w>")
    if head in ("satt", "satc"):
        return EstimandSpec(EstimandKind(head))
    return getattr(EstimandSpec, head)(rho)


# ---------------------------------------------------------------------------
# JSON


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating, np.integer)):
        return _clean(obj.item())
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    """Stable JSON: sorted keys, non-finite floats as null, trailing newline."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def rho_to_dict(rho: RhoAssumption) -> dict:
    return {"kind": rho.kind.value, "value": rho.value}


def estimand_to_dict(e: EstimandSpec) -> dict:
    return {
        "kind": e.kind.value,
        "omega": e.omega,
        "rho": rho_to_dict(e.rho),
        "sampling": e.sampling.value,
        "label": e.label,
    }


def estimand_from_dict(d: dict) -> EstimandSpec:
    try:
        rho = RhoAssumption(RhoKind(d["rho"]["kind"]), d["rho"]["value"])
        return EstimandSpec(
            EstimandKind(d["kind"]),
            omega=d.get("omega"),
            rho=rho,
            sampling=SamplingModel(d.get("sampling", "finite")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SatmixError):
            raise
        raise ParseError(f"malformed estimand record: {exc}") from None


def interval_to_dict(r: IntervalResult) -> dict:
    return {
        "estimand": estimand_to_dict(r.estimand),
        "center": r.center,
        "half_width": r.half_width,
        "lower": r.lower,
        "upper": r.upper,
        "level": r.level,
        "variance": r.variance,
        "variance_mode": r.variance_mode.value,
        "omega": r.omega,
        "rejects_zero": r.rejects_zero,
    }


def interval_from_dict(d: dict) -> IntervalResult:
    try:
        return IntervalResult(
            estimand=estimand_from_dict(d["estimand"]),
            center=float(d["center"]),
            half_width=float(d["half_width"]),
            level=float(d["level"]),
            variance=float(d["variance"]),
            variance_mode=VarianceMode(d["variance_mode"]),
            omega=d.get("omega"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SatmixError):
            raise
        raise ParseError(f"malformed interval record: {exc}") from None


# ---------------------------------------------------------------------------
# CSV output


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return format(float(value) + 0.0, ".17g") if math.isfinite(value) else str(float(value))
    return str(value)


def write_csv(fh: IO[str], header: list[str], rows: Iterable[Iterable]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])


COVERAGE_FIELDS = [
    "scenario",
    "estimand",
    "mode",
    "n_intervals",
    "n_skipped",
    "coverage_target",
    "coverage_satt",
    "coverage_satc",
    "coverage_sate",
    "mean_length",
    "reject_rate",
    "se_coverage_target",
    "se_coverage_satt",
    "se_coverage_sate",
    "se_reject_rate",
]


def coverage_to_dict(report: CoverageReport) -> dict:
    return {
        "n_samples": report.n_samples,
        "n_assignments": report.n_assignments,
        "seed": report.seed,
        "records": [{f: getattr(r, f) for f in COVERAGE_FIELDS} for r in report.records],
    }


def coverage_to_csv(report: CoverageReport) -> str:
    buf = io.StringIO()
    write_csv(buf, COVERAGE_FIELDS, ([getattr(r, f) for f in COVERAGE_FIELDS] for r in report.records))
    return buf.getvalue()


@dataclass(frozen=True)
class Table:
    """Header plus rows, renderable as CSV."""

    header: list
    rows: list

    def to_csv(self) -> str:
        buf = io.StringIO()
        write_csv(buf, self.header, self.rows)
        return buf.getvalue()
