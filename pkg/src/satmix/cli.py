"""Command-line front end: ``satmix {analyze,batch,simulate,oracle}``.

Exit codes: 0 success, 64 usage error, otherwise the ``exit_code`` of the
raised error class (2 parse, 3 degenerate variance, 4 enumeration cap,
5 invalid config, ..., 18 oracle verification failure).
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import estimators as est
from . import randomization_oracle as oracle
from . import simulation_lab as lab
from .batch import ROW_HEADER, RowResult, row_fields, run_batch
from .core_types import EstimandSpec, RhoAssumption, VarianceMode, summarize
from .errors import ConfigInvalid, SatmixError, VerificationFailed
from .serialization import (
    coverage_to_csv,
    coverage_to_dict,
    dumps,
    fmt,
    interval_to_dict,
    parse_estimand,
    parse_rho,
    read_observed_csv,
    read_science_csv,
    write_csv,
)

log = logging.getLogger("satmix")

USAGE_EXIT = 64
ORACLE_TOLERANCE = 1e-8


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _write(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _safe(fn, *args, **kw):
    """Value of ``fn`` or an ``{"error": ...}`` record for optional report fields."""
    try:
        return fn(*args, **kw)
    except SatmixError as exc:
        return {"error": exc.code, "message": str(exc)}


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args) -> int:
    obs = read_observed_csv(args.data)
    if args.adjust:
        obs = est.covariate_adjust(obs)
    summary = summarize(obs)
    mode = VarianceMode(args.mode)
    rho = parse_rho(args.rho)
    requested = parse_estimand(args.estimand, rho)
    primary = est.interval(obs, requested, args.alpha, mode)

    panel = {
        "sate": EstimandSpec.sate(rho),
        "satt": EstimandSpec.satt(),
        "satc": EstimandSpec.satc(),
    }
    omega_star = {}
    for assumption in (RhoAssumption.known(-1.0), RhoAssumption.known(0.0), RhoAssumption.one(), RhoAssumption.empirical()):
        omega_star[assumption.label] = _safe(est.resolve_omega, obs, EstimandSpec.sato(assumption))
    if requested.rho.kind.value in ("known", "bound") and requested.rho.label not in omega_star:
        omega_star[requested.rho.label] = _safe(est.resolve_omega, obs, EstimandSpec.sato(requested.rho))

    mse = {}
    for r in (0.0, 1.0):
        s_tau_sq = summary.s0sq + summary.s1sq - 2 * r * summary.s0 * summary.s1
        mse[f"known:{r:g}"] = est.mse_sate_satt(max(s_tau_sq, 0.0), summary.m, summary.p)

    ratio = _safe(est.variance_ratio_test, summary, args.alpha)
    threshold = _safe(est.rho_threshold, summary.s0, summary.s1, summary.p)
    report = {
        "n": summary.n,
        "m": summary.m,
        "mean1": summary.mean1,
        "mean0": summary.mean0,
        "s1sq": summary.s1sq,
        "s0sq": summary.s0sq,
        "t_diff": summary.t_diff,
        "alpha": args.alpha,
        "variance_mode": mode.value,
        "covariate_adjusted": bool(args.adjust),
        "interval": interval_to_dict(primary),
        "panel": {k: _safe(lambda e: interval_to_dict(est.interval(obs, e, args.alpha, mode)), e) for k, e in panel.items()},
        "rho_threshold": threshold if isinstance(threshold, dict) else {"value": threshold.value, "in_range": threshold.in_range},
        "variance_ratio_test": ratio if isinstance(ratio, dict) else vars(ratio),
        "omega_star": omega_star,
        "mse_sate_satt": mse,
    }
    _write(dumps(report), args.out)
    return 0


# ---------------------------------------------------------------------------
# batch


def cmd_batch(args) -> int:
    rows_out = open(args.rows, "w", newline="", encoding="utf-8") if args.rows else None
    try:
        if rows_out is not None:
            write_csv(rows_out, ROW_HEADER, [])

        def emit(res):
            if rows_out is not None and isinstance(res, RowResult):
                rows_out.write(",".join(fmt(v) for v in row_fields(res)) + "\n")

        report = run_batch(
            args.data, alpha=args.alpha, mode=VarianceMode(args.mode), workers=args.workers, on_result=emit
        )
    finally:
        if rows_out is not None:
            rows_out.close()
    for q in report.quarantined:
        log.warning("quarantined line %d (%s): %s", q.line, q.code, q.reason)
    _write(dumps(report.to_dict()), args.out)
    return 0


# ---------------------------------------------------------------------------
# simulate

_GRID_KEY = {"random_coefficient": "sigma_tau", "tobit": "tau", "binary": "p1"}


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigInvalid("config must be a JSON object")
    return cfg


def build_simulation(cfg: dict, args) -> tuple[list, lab.ReplicationPlan]:
    """Merge config file and flags (flags win) into DGPs and a plan."""
    known = {"dgp", "grid", "n", "seed", "n_samples", "n_assignments", "p", "alpha", "estimands", "modes", "p0", "coupling"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {', '.join(sorted(unknown))}")

    def pick(name, default):
        flag = getattr(args, name, None)
        return flag if flag is not None else cfg.get(name, default)

    try:
        kind = lab.DgpKind(pick("dgp", "random_coefficient"))
        if args.tau is not None:
            grid = [args.tau]
        else:
            grid = cfg.get("grid", {"random_coefficient": [0.0, 0.5, 1.0, 2.0], "tobit": [1.0], "binary": [0.2]}[kind.value])
        if not isinstance(grid, list) or not grid:
            raise ConfigInvalid(f"'grid' must be a non-empty list of {_GRID_KEY[kind.value]} values")
        n, seed = int(pick("n", 1000)), int(pick("seed", 0))
        dgps = lab.grid(kind, [float(v) for v in grid], n, seed, p0=cfg.get("p0", 0.1), coupling=cfg.get("coupling", "monotone"))
        estimands = tuple(parse_estimand(e) for e in cfg.get("estimands", [])) or lab.DEFAULT_ESTIMANDS
        modes = (args.mode,) if args.mode else tuple(cfg.get("modes", ["exact"]))
        plan = lab.ReplicationPlan(
            n_samples=int(pick("n_samples", 200)),
            n_assignments=int(pick("n_assignments", 200)),
            p=float(pick("p", 0.5)),
            alpha=float(pick("alpha", 0.05)),
            estimands=estimands,
            modes=modes,
        )
    except ConfigInvalid:
        raise
    except (SatmixError, TypeError, ValueError, KeyError) as exc:
        raise ConfigInvalid(f"invalid simulation config: {exc}") from None
    return dgps, plan


def cmd_simulate(args) -> int:
    dgps, plan = build_simulation(_load_config(args.config), args)
    for d in dgps:
        log.info("simulating %s (n=%d, seed=%d, coupling=%s)", d.label, d.n, d.seed, d.coupling.value)
    report = lab.run_grid(dgps, plan)
    if args.out_csv:
        Path(args.out_csv).write_text(coverage_to_csv(report), encoding="utf-8")
    text = dumps(coverage_to_dict(report))
    _write(text, args.out_json)
    return 0


# ---------------------------------------------------------------------------
# oracle


def cmd_oracle(args) -> int:
    table = read_science_csv(args.data)
    verdicts = oracle.verify_all(table, args.m, cap=args.cap)
    header = ["formula_id", "mode", "omega", "exact_value", "formula_value", "relative_error", "pass"]
    rows = [
        [v.formula_id, v.mode.value, v.omega, v.exact_value, v.formula_value, v.relative_error,
         v.passed(ORACLE_TOLERANCE) if v.mode is VarianceMode.EXACT else None]
        for v in verdicts
    ]
    if args.json:
        _write(dumps([dict(zip(header, r)) for r in rows]), args.out)
    else:
        buf = io.StringIO()
        write_csv(buf, header, rows)
        _write(buf.getvalue(), args.out)
    failed = [v for v in verdicts if v.mode is VarianceMode.EXACT and not v.passed(ORACLE_TOLERANCE)]
    if failed:
        raise VerificationFailed(
            "exact-mode closed forms disagree with enumeration: "
            + ", ".join(f"{v.formula_id}(rel err {v.relative_error:.3g})" for v in failed)
        )
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, *, estimand=False):
    p.add_argument("--alpha", type=float, default=0.05, help="1 - confidence level (default 0.05)")
    if estimand:
        p.add_argument("--estimand", default="satt", help="sate | satt | satc | sato | mix:<w> (default satt)")
        p.add_argument("--rho", default="neyman", help="neyman | one | empirical | bound:<r> | known:<r>")
        p.add_argument("--mode", choices=["exact", "paper"], default="exact", help="exact: finite-N covariances; paper: asymptotic (N - 1) forms")
    p.add_argument("--out", "-o", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="satmix", description="Intervals for sample average treatment effects under randomization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="intervals for one unit-level dataset (CSV with y, t[, x1..])")
    p.add_argument("data")
    p.add_argument("--adjust", action="store_true", help="use residuals from regressing y on x1..xp")
    _add_common(p, estimand=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("batch", help="interval panel for many summary rows")
    p.add_argument("data")
    p.add_argument("--rows", help="per-row CSV output")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--mode", choices=["exact", "paper"], default="exact")
    _add_common(p)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("simulate", help="Monte Carlo coverage study")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--dgp", choices=[k.value for k in lab.DgpKind])
    p.add_argument("--tau", type=float, help="single grid value (sigma_tau, tau, or p1)")
    p.add_argument("--n", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--n-assignments", dest="n_assignments", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["exact", "paper"])
    p.add_argument("--out-json", help="JSON report (default stdout)")
    p.add_argument("--out-csv", help="CSV coverage table")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="certify closed forms by exhaustive enumeration (CSV with y0, y1)")
    p.add_argument("data")
    p.add_argument("--m", type=int, required=True, help="number of treated units")
    p.add_argument("--cap", type=int, default=oracle.DEFAULT_CAP, help="maximum C(N, m)")
    p.add_argument("--json", action="store_true", help="JSON instead of CSV")
    p.add_argument("--out", "-o")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SatmixError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [IO]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
