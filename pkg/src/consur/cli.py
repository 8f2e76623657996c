"""Batch command line interface.

Subcommands cover the full workflow: fit a model from a design file, produce
set estimates from a fitted model, map a sampling criterion over the domain,
run one sequential strategy, reproduce the GP benchmark study, and rebuild
report files from stored run records.

Exit codes: 0 success, 2 configuration problem, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .benchmark import benchmark_gp
from .bvn import InvalidCovarianceError
from .conservative import conservative_level
from .criteria import CriterionEvaluator
from .excursion import (coverage, expected_measure, quantile_at, type1_expected,
                        type2_uncertainty, vorobev_level, vorobev_uncertainty)
from .gp import Design, SingularDesignError, fit_posterior, gls_mean, mle_fit
from .optimize import CriterionEvaluationError
from .report import (report, write_coverage_csv, write_criterion_map,
                     write_metrics_csv, write_search_trace)
from .sampling import lhs_maximin, lhs_plain, seed_stream
from .strategy import RunRecord, run_strategy


def _section(cfg: dict, key: str) -> dict:
    if key not in cfg:
        raise cfgmod.ConfigError(f"config needs a {key!r} section")
    sec = cfg[key]
    if not isinstance(sec, dict):
        raise cfgmod.ConfigError(f"{key!r} section must be a mapping")
    return sec


def cmd_fit(args) -> int:
    cfg = cfgmod.load_config(args.config)
    pts, vals = cfgmod.read_design_csv(args.design)
    design = Design(pts, vals, float(cfg.get("noise_variance", 0.0)))
    mean_cfg = cfg.get("mean_value")
    extra = {}
    if "bounds" in cfg:
        family = cfg.get("kernel", {}).get("family", "matern32")
        bounds = {k: tuple(float(x) for x in v) for k, v in _section(cfg, "bounds").items()}
        fit = mle_fit(design, bounds, family,
                      n_starts=int(cfg.get("n_starts", 8)),
                      seed=int(cfg.get("seed", 0)),
                      estimate_noise=bool(cfg.get("estimate_noise", False)),
                      mean_value=None if mean_cfg is None else float(mean_cfg))
        kernel = fit.kernel
        design = Design(pts, vals, fit.noise_variance)
        mu = fit.mean_value
        extra = {"log_likelihood": fit.log_likelihood, "improved": fit.improved}
    else:
        kernel = cfgmod.kernel_from_config(_section(cfg, "kernel"), pts.shape[1])
        mu = gls_mean(kernel, design) if mean_cfg is None else float(mean_cfg)
    fit_posterior(kernel, design, mu)   # fail fast on a singular design
    cfgmod.save_model(args.out, kernel, design, mu, extra)
    print(f"model written to {args.out} (n={design.n}, family={kernel.family})")
    return 0


def cmd_estimate(args) -> int:
    cfg = cfgmod.load_config(args.config)
    kernel, design, mu = cfgmod.load_model(args.model)
    prob = cfgmod.problem_from_config(_section(cfg, "problem"))
    search = cfgmod.search_from_config(cfg.get("search", {}))
    post = fit_posterior(kernel, design, mu)
    fld = coverage(post, prob)
    cons = conservative_level(post, prob, fld, prob.grid, search)
    grid = prob.grid
    rho_v = vorobev_level(fld, grid)
    q_med = quantile_at(fld, grid, 0.5, kind="median")
    q_alpha = quantile_at(fld, grid, prob.alpha)
    q_v = quantile_at(fld, grid, rho_v, kind="vorobev-expectation")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_coverage_csv(grid, fld, {"median": q_med, "alpha": q_alpha,
                                   "vorobev": q_v, "ce": cons.quantile},
                       out / "coverage.csv")
    write_search_trace(cons.trace, out / "search_trace.csv")
    estimates = {
        "threshold": prob.threshold,
        "orientation": prob.orientation,
        "alpha": prob.alpha,
        "rho_v": rho_v,
        "rho_alpha": cons.rho,
        "psi": cons.inclusion.psi,
        "psi_se": cons.inclusion.std_error,
        "search_failed": cons.search_failed,
        "measure_expected": expected_measure(fld, grid),
        "measure_median": q_med.measure,
        "measure_alpha": q_alpha.measure,
        "measure_vorobev": q_v.measure,
        "measure_ce": cons.quantile.measure,
        "type1_alpha": type1_expected(fld, grid, cons.rho),
        "type2_alpha": type2_uncertainty(fld, grid, cons.rho),
        "vorobev_uncertainty": vorobev_uncertainty(fld, grid, rho_v),
    }
    (out / "estimates.json").write_text(json.dumps(estimates, indent=1))
    print(f"estimates written to {out} "
          f"(rho_alpha={cons.rho:.4f}, measure_ce={cons.quantile.measure:.5f})")
    return 0


def cmd_criterion_map(args) -> int:
    cfg = cfgmod.load_config(args.config)
    kernel, design, mu = cfgmod.load_model(args.model)
    prob = cfgmod.problem_from_config(_section(cfg, "problem"))
    ccfg = _section(cfg, "criterion")
    kind = ccfg.get("kind", "jn")
    post = fit_posterior(kernel, design, mu)
    ev = CriterionEvaluator(post, prob)

    rho = ccfg.get("rho", 0.5)
    if rho == "conservative":
        fld = coverage(post, prob)
        search = cfgmod.search_from_config(cfg.get("search", {}))
        cons = conservative_level(post, prob, fld, prob.grid, search)
        rho = float(min(max(cons.rho, 1e-6), 1.0 - 1e-9))
    elif rho == "vorobev":
        rho = float(vorobev_level(coverage(post, prob), prob.grid))
    else:
        try:
            rho = float(rho)
        except (TypeError, ValueError):
            raise cfgmod.ConfigError(
                f"criterion rho must be a number, 'conservative' or 'vorobev', got {rho!r}"
            ) from None

    if kind == "jn":
        f = lambda p: ev.jn(p, rho)
    elif kind == "jt2":
        f = lambda p: ev.jt2(p, rho)
    elif kind == "imse":
        f = ev.imse
    elif kind == "timse":
        f = ev.timse
    else:
        raise cfgmod.ConfigError(f"unknown criterion kind {kind!r}")

    map_cfg = cfg.get("map_grid", {"type": "grid", "per_dim": 41})
    cand = cfgmod.grid_from_config(map_cfg, prob.box).points
    values = np.array([f(p[None, :]) for p in cand])
    write_criterion_map(cand, values, args.out)
    print(f"{kind} map over {cand.shape[0]} candidates written to {args.out}")
    return 0


def _initial_design(cfg: dict, prob, objective, noise: float) -> Design:
    icfg = cfg.get("init", {})
    if "design" in icfg:
        pts, vals = cfgmod.read_design_csv(icfg["design"])
        return Design(pts, vals, noise)
    n0 = int(icfg.get("n", 10))
    d = prob.box.shape[0]
    rng = seed_stream(int(icfg.get("seed", 0)), "init-design")
    method = icfg.get("method", "lhs-maximin")
    if method == "lhs-maximin":
        unit = lhs_maximin(n0, d, rng)
    elif method == "lhs":
        unit = lhs_plain(n0, d, rng)
    else:
        raise cfgmod.ConfigError(f"unknown init method {method!r}")
    pts = prob.box[:, 0] + unit * (prob.box[:, 1] - prob.box[:, 0])
    vals = np.asarray(objective(pts), dtype=float).ravel()
    return Design(pts, vals, noise)


def cmd_run(args) -> int:
    cfg = cfgmod.load_config(args.config)
    objective, defaults = cfgmod.objective_from_config(_section(cfg, "objective"))
    prob_cfg = dict(defaults)
    prob_cfg.update(cfg.get("problem", {}))
    prob = cfgmod.problem_from_config(prob_cfg)
    scfg = cfgmod.strategy_from_config(_section(cfg, "strategy"))

    mcfg = cfg.get("model", {})
    noise = float(mcfg.get("noise_variance", 0.0))
    init = _initial_design(cfg, prob, objective, noise)
    if "kernel" in mcfg:
        kernel = cfgmod.kernel_from_config(mcfg["kernel"], init.dim)
        mu = float(mcfg.get("mean_value", 0.0))
    else:
        kernel, mu = None, 0.0   # hyperparameters come from the ML fit

    truth = None
    if bool(cfg.get("truth", True)):
        truth = prob.in_set(np.asarray(objective(prob.grid.points), dtype=float).ravel())

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = run_strategy(objective, scfg, prob, init, kernel, mu, truth_mask=truth,
                       persist_path=out / "record.json")
    write_metrics_csv([rec], out / "metrics.csv")
    last = rec.rows[-1]
    print(f"strategy {rec.strategy}: {len(rec.rows) - 1} iterations, "
          f"n={last.n_points}, measure_ce={last.measure_ce:.5f} -> {out}")
    return 0


def cmd_benchmark(args) -> int:
    cfg = cfgmod.load_config(args.config)
    bcfg = cfgmod.benchmark_from_config(cfg.get("benchmark", cfg))
    out = Path(args.out)
    rec_dir = out / "records"
    rec_dir.mkdir(parents=True, exist_ok=True)
    progress = None if args.quiet else (lambda s: print(s, flush=True))
    records = benchmark_gp(bcfg, progress=progress)
    for r in records:
        r.save(rec_dir / f"{r.strategy}-doe{r.doe}-rep{r.replication}.json")
    report(records, out)
    print(f"{len(records)} runs recorded; report written to {out}")
    return 0


def cmd_report(args) -> int:
    rec_dir = Path(args.records)
    files = sorted(rec_dir.glob("*.json"))
    if not files:
        raise cfgmod.ConfigError(f"no .json run records found in {rec_dir}")
    try:
        records = [RunRecord.load(f) for f in files]
    except (KeyError, TypeError, json.JSONDecodeError) as e:
        raise cfgmod.ConfigError(f"cannot load run records: {e}") from None
    report(records, args.out)
    print(f"report over {len(records)} records written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="consur",
        description="Conservative excursion-set estimation and sequential design.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a GP model from a design CSV")
    p.add_argument("--design", required=True, help="CSV with columns x1,...,xd,y")
    p.add_argument("--config", required=True, help="YAML fit settings")
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("estimate", help="set estimates from a fitted model")
    p.add_argument("--model", required=True, help="model.json from fit")
    p.add_argument("--config", required=True, help="YAML with a problem section")
    p.add_argument("--out", default="estimate-out")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("criterion-map", help="criterion landscape over the domain")
    p.add_argument("--model", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="map.csv")
    p.set_defaults(func=cmd_criterion_map)

    p = sub.add_parser("run", help="run one sequential strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="run-out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("benchmark", help="GP sample-path benchmark study")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="benchmark-out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("report", help="rebuild report files from run records")
    p.add_argument("--records", required=True, help="directory of record .json files")
    p.add_argument("--out", default="report-out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (SingularDesignError, CriterionEvaluationError, InvalidCovarianceError,
            np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except (ValueError, TypeError, KeyError, OSError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
