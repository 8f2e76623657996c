"""Report emission: metric CSVs, trace CSVs and JSON summaries.

All writers are deterministic functions of their inputs: fixed column orders,
fixed row orders, repr-based float formatting (shortest round-trip), no
timestamps. Wall-clock times live only in the JSON records, never in CSVs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .benchmark import aggregate
from .excursion import CoverageField, IntegrationGrid, QuantileEstimate
from .strategy import RunRecord

METRIC_COLUMNS = (
    "strategy", "doe", "replication", "iteration", "n_points",
    "criterion_rho", "criterion_value",
    "rho_v", "rho_alpha", "psi", "psi_se",
    "measure_expected", "measure_vorobev", "measure_ce",
    "type1_alpha", "type2_alpha", "vorobev_unc_alpha", "vorobev_unc_median",
    "proportion_inside", "true_type1_ce", "true_type2_ce",
    "rel_vol_error_ce", "rel_vol_error_vorobev", "search_failed",
)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_rows(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_metrics_csv(records: list[RunRecord], path: str | Path) -> None:
    """Long-format per-iteration metrics, sorted by (strategy, doe, replication, iteration)."""
    rows = []
    for rec in sorted(records, key=lambda r: (r.strategy, r.doe, r.replication)):
        for row in sorted(rec.rows, key=lambda r: r.iteration):
            rows.append([
                rec.strategy, rec.doe, rec.replication, row.iteration, row.n_points,
                row.criterion_rho, row.criterion_value,
                row.rho_v, row.rho_alpha, row.psi, row.psi_se,
                row.measure_expected, row.measure_vorobev, row.measure_ce,
                row.type1_alpha, row.type2_alpha, row.vorobev_unc_alpha,
                row.vorobev_unc_median, row.proportion_inside,
                row.true_type1_ce, row.true_type2_ce,
                row.rel_vol_error_ce, row.rel_vol_error_vorobev, row.search_failed,
            ])
    _write_rows(path, METRIC_COLUMNS, rows)


def write_aggregates(records: list[RunRecord], out_dir: str | Path) -> None:
    """Aggregated views: type-II and proportion-inside by iteration, final volumes."""
    out = Path(out_dir)
    agg = aggregate(records)
    _write_rows(out / "type2_by_iteration.csv",
                ("strategy", "iteration", "runs", "mean_type2_alpha", "median_type2_alpha"),
                [(a["strategy"], a["iteration"], a["runs"],
                  a["mean_type2_alpha"], a["median_type2_alpha"]) for a in agg])
    _write_rows(out / "proportion_inside.csv",
                ("strategy", "iteration", "runs",
                 "mean_proportion_inside", "median_proportion_inside"),
                [(a["strategy"], a["iteration"], a["runs"],
                  a["mean_proportion_inside"], a["median_proportion_inside"]) for a in agg])
    finals = []
    for rec in sorted(records, key=lambda r: (r.strategy, r.doe, r.replication)):
        last = rec.rows[-1]
        finals.append((rec.strategy, rec.doe, rec.replication, last.iteration,
                       last.rho_alpha, last.measure_ce, last.measure_vorobev,
                       last.type2_alpha, last.proportion_inside))
    _write_rows(out / "final_volumes.csv",
                ("strategy", "doe", "replication", "iteration", "rho_alpha",
                 "measure_ce", "measure_vorobev", "type2_alpha", "proportion_inside"),
                finals)
    last_iter = max(a["iteration"] for a in agg)
    summary = {
        "records": len(records),
        "strategies": sorted({r.strategy for r in records}),
        "final_iteration": last_iter,
        "final": [a for a in agg if a["iteration"] == last_iter],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1))


def report(records: list[RunRecord], out_dir: str | Path) -> None:
    """Full report: metrics.csv plus the aggregated CSVs and summary.json."""
    if not records:
        raise ValueError("report needs at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(records, out / "metrics.csv")
    write_aggregates(records, out)


def write_search_trace(trace, path: str | Path) -> None:
    """Conservative-search trace: (rho, ell, psi, SE, decision) per evaluation."""
    rows = [(t.rho, t.ell, t.psi, t.std_error, t.decision) for t in trace]
    _write_rows(path, ("rho", "ell", "psi", "std_error", "decision"), rows)


def write_optimizer_trace(trace, path: str | Path) -> None:
    rows = [(t.step, t.start, t.iterations, t.value) for t in trace]
    _write_rows(path, ("step", "start", "iterations", "value"), rows)


def write_coverage_csv(grid: IntegrationGrid, fld: CoverageField,
                       estimates: dict[str, QuantileEstimate], path: str | Path) -> None:
    """Grid dump: coordinates, weight, coverage, and one membership flag per estimate."""
    kinds = sorted(estimates)
    header = [f"x{i + 1}" for i in range(grid.dim)] + ["weight", "coverage"] + \
        [f"member_{k}" for k in kinds]
    rows = []
    for j in range(grid.m):
        row = list(grid.points[j]) + [grid.weights[j], fld.values[j]]
        row += [bool(estimates[k].members[j]) for k in kinds]
        rows.append(row)
    _write_rows(path, header, rows)


def write_criterion_map(points: np.ndarray, values: np.ndarray, path: str | Path) -> None:
    """Criterion landscape on a candidate grid, one row per candidate."""
    points = np.atleast_2d(points)
    header = [f"x{i + 1}" for i in range(points.shape[1])] + ["value"]
    rows = [list(points[j]) + [float(values[j])] for j in range(points.shape[0])]
    _write_rows(path, header, rows)
