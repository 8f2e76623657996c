"""Sequential design strategy loop.

Each iteration refreshes the posterior, measures the current set estimates,
picks the next evaluation batch by minimizing the configured SUR criterion,
evaluates the objective there and folds the observations in. Records carry
every reported metric per iteration, JSON-serializably.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conservative import ConservativeResult, SearchConfig, conservative_level
from .criteria import CriterionEvaluator
from .excursion import (ExcursionProblem, coverage, empirical_errors, expected_measure,
                        quantile_at, type1_expected, type2_uncertainty, vorobev_level,
                        vorobev_uncertainty)
from .gp import Design, GpPosterior, KernelSpec, fit_posterior, mle_fit, update_posterior
from .optimize import OptimizerConfig, optimize_batch
from .sampling import seed_stream

STRATEGY_KINDS = ("imse", "timse", "A", "B", "C")


@dataclass(frozen=True)
class StrategyConfig:
    """One sequential strategy.

    Kinds: "imse", "timse", "A" (expected future Vorob'ev uncertainty at fixed
    rho = 0.5), "B" (same at the current conservative level), "C" (expected
    future type-II uncertainty at the current conservative level).
    """

    kind: str
    alpha: float = 0.95
    q: int = 1
    iterations: int = 20
    seed: int = 0
    reestimate: bool = False
    reestimate_every: int = 1
    mle_bounds: dict | None = None
    mle_family: str = "matern32"
    estimate_noise: bool = False
    optimizer: OptimizerConfig = OptimizerConfig()
    search: SearchConfig = SearchConfig()

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"strategy kind must be one of {STRATEGY_KINDS}")
        if self.q < 1 or self.iterations < 0:
            raise ValueError("q >= 1 and iterations >= 0 required")
        if self.reestimate and self.mle_bounds is None:
            raise ValueError("reestimate=True requires mle_bounds")
        if self.reestimate and self.reestimate_every < 1:
            raise ValueError("reestimate_every must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    """State after iteration `iteration` (0 = initial model, no batch)."""

    iteration: int
    n_points: int
    batch: list                 # points evaluated this iteration ([] at 0)
    observations: list
    kernel: dict                # hyperparameters in force
    criterion_value: float      # optimum of the criterion that chose the batch (nan at 0)
    criterion_rho: float        # level the criterion used (nan if level-free)
    rho_v: float
    rho_alpha: float
    psi: float
    psi_se: float
    measure_expected: float     # E[mu(excursion)]
    measure_vorobev: float      # mu(Q_{rho_V})
    measure_ce: float           # mu(CE_alpha)
    type1_alpha: float          # expected type I at rho_alpha
    type2_alpha: float          # expected type II at rho_alpha
    vorobev_unc_alpha: float    # H at rho_alpha
    vorobev_unc_median: float   # H at 0.5
    proportion_inside: float    # fraction of observations so far inside the target
    true_type1_ce: float        # vs truth mask (nan when unknown)
    true_type2_ce: float
    rel_vol_error_ce: float
    rel_vol_error_vorobev: float
    search_failed: bool
    wall_time: float


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


@dataclass
class RunRecord:
    strategy: str
    doe: int
    replication: int
    config: dict
    problem: dict
    rows: list[IterationRecord] = field(default_factory=list)
    final_points: list = field(default_factory=list)
    final_values: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        rows = [IterationRecord(**r) for r in d["rows"]]
        return cls(d["strategy"], d["doe"], d["replication"], d["config"], d["problem"],
                   rows, d["final_points"], d["final_values"])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=_jsonable))

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def metrics_equal(self, other: "RunRecord") -> bool:
        """Equality of everything except wall-clock time."""
        def strip(d: dict) -> dict:
            out = dict(d)
            out["rows"] = [{k: v for k, v in r.items() if k != "wall_time"}
                           for r in d["rows"]]
            return out
        a = json.loads(json.dumps(strip(self.to_dict()), default=_jsonable))
        b = json.loads(json.dumps(strip(other.to_dict()), default=_jsonable))
        return a == b


def _kernel_dict(post: GpPosterior) -> dict:
    return {
        "family": post.kernel.family,
        "lengthscales": post.kernel.lengthscales.tolist(),
        "variance": post.kernel.variance,
        "noise_variance": post.design.noise_variance,
        "mean_value": post.mean_value,
    }


def _problem_dict(prob: ExcursionProblem) -> dict:
    return {
        "threshold": prob.threshold,
        "orientation": prob.orientation,
        "alpha": prob.alpha,
        "box": prob.box.tolist(),
        "grid_m": prob.grid.m,
        "grid_provenance": prob.grid.provenance,
    }


def _measure_state(post: GpPosterior, prob: ExcursionProblem, fld, cons: ConservativeResult,
                   truth_mask: np.ndarray | None) -> dict:
    grid = prob.grid
    rho_v = vorobev_level(fld, grid)
    q_v = quantile_at(fld, grid, rho_v, kind="vorobev-expectation")
    rho_a = cons.rho
    out = {
        "rho_v": float(rho_v),
        "rho_alpha": float(rho_a),
        "psi": float(cons.inclusion.psi),
        "psi_se": float(cons.inclusion.std_error),
        "measure_expected": expected_measure(fld, grid),
        "measure_vorobev": q_v.measure,
        "measure_ce": cons.quantile.measure,
        "type1_alpha": type1_expected(fld, grid, rho_a),
        "type2_alpha": type2_uncertainty(fld, grid, rho_a),
        "vorobev_unc_alpha": vorobev_uncertainty(fld, grid, rho_a),
        "vorobev_unc_median": vorobev_uncertainty(fld, grid, 0.5),
        "search_failed": bool(cons.search_failed),
        "proportion_inside": float(np.mean(prob.in_set(post.design.values)))
        if post.n > 0 else float("nan"),
    }
    if truth_mask is None:
        out.update(true_type1_ce=float("nan"), true_type2_ce=float("nan"),
                   rel_vol_error_ce=float("nan"), rel_vol_error_vorobev=float("nan"))
    else:
        err_ce = empirical_errors(cons.quantile, truth_mask, grid)
        err_v = empirical_errors(q_v, truth_mask, grid)
        out.update(true_type1_ce=err_ce.false_positive_volume,
                   true_type2_ce=err_ce.false_negative_volume,
                   rel_vol_error_ce=err_ce.relative_volume_error,
                   rel_vol_error_vorobev=err_v.relative_volume_error)
    return out


def _criterion_level(kind: str, cons: ConservativeResult) -> float:
    if kind == "A":
        return 0.5
    if kind in ("B", "C"):
        # freeze the last known conservative level during the lookahead,
        # clamped inside (0, 1) so the criterion stays defined
        return float(min(max(cons.rho, 1e-6), 1.0 - 1e-9))
    return float("nan")


def run_strategy(objective, cfg: StrategyConfig, prob: ExcursionProblem,
                 init_design: Design, kernel: KernelSpec | None = None,
                 mean_value: float = 0.0, truth_mask: np.ndarray | None = None,
                 persist_path: str | Path | None = None,
                 doe: int = 0, replication: int = 0) -> RunRecord:
    """Run one sequential strategy and record per-iteration metrics.

    `objective` maps a (q, d) batch to q values. With kernel=None the
    hyperparameters are fitted by maximum likelihood from the initial design
    (cfg.reestimate must then be True). If the objective raises, the partial
    record is saved to persist_path (when given) before the error propagates.
    """
    if kernel is None:
        if not cfg.reestimate:
            raise ValueError("kernel=None requires cfg.reestimate=True")
        fit = mle_fit(init_design, cfg.mle_bounds, cfg.mle_family,
                      seed=cfg.seed, estimate_noise=cfg.estimate_noise)
        kernel, mean_value = fit.kernel, fit.mean_value
        init_design = Design(init_design.points, init_design.values, fit.noise_variance)
    post = fit_posterior(kernel, init_design, mean_value)

    record = RunRecord(cfg.kind, doe, replication,
                       config=_config_dict(cfg), problem=_problem_dict(prob))

    def refresh(p: GpPosterior):
        fld = coverage(p, prob)
        cons = conservative_level(p, prob, fld, prob.grid, cfg.search)
        return fld, cons

    def add_row(it: int, batch, obs, crit_val: float, crit_rho: float,
                fld, cons, t0: float) -> None:
        state = _measure_state(post, prob, fld, cons, truth_mask)
        record.rows.append(IterationRecord(
            iteration=it,
            n_points=post.n,
            batch=[] if batch is None else np.asarray(batch).tolist(),
            observations=[] if obs is None else np.asarray(obs).tolist(),
            kernel=_kernel_dict(post),
            criterion_value=float(crit_val),
            criterion_rho=float(crit_rho),
            wall_time=time.perf_counter() - t0,
            **state,
        ))

    t0 = time.perf_counter()
    fld, cons = refresh(post)
    add_row(0, None, None, float("nan"), float("nan"), fld, cons, t0)

    for it in range(1, cfg.iterations + 1):
        t_it = time.perf_counter()
        if cfg.reestimate and (it - 1) % cfg.reestimate_every == 0 and post.n >= 2:
            fit = mle_fit(post.design, cfg.mle_bounds, cfg.mle_family,
                          seed=cfg.seed + it, estimate_noise=cfg.estimate_noise)
            design = Design(post.design.points, post.design.values, fit.noise_variance)
            post = fit_posterior(fit.kernel, design, fit.mean_value)
            fld, cons = refresh(post)

        rho = _criterion_level(cfg.kind, cons)
        evaluator = CriterionEvaluator(post, prob)
        if cfg.kind in ("A", "B"):
            crit = lambda batch: evaluator.jn(batch, rho)
        elif cfg.kind == "C":
            crit = lambda batch: evaluator.jt2(batch, rho)
        elif cfg.kind == "imse":
            crit = evaluator.imse
        else:
            crit = evaluator.timse
        opt_seed = int(seed_stream(cfg.seed, f"optimizer-{it}").integers(2**62))
        opt_cfg = dataclasses.replace(cfg.optimizer, seed=opt_seed)
        result = optimize_batch(crit, prob.box, cfg.q, opt_cfg)

        try:
            obs = np.asarray(objective(result.batch), dtype=float).ravel()
            if obs.shape[0] != cfg.q:
                raise ValueError(
                    f"objective returned {obs.shape[0]} values for a batch of {cfg.q}")
        except Exception:
            record.final_points = post.design.points.tolist()
            record.final_values = post.design.values.tolist()
            if persist_path is not None:
                record.save(persist_path)
            raise

        post = update_posterior(post, result.batch, obs)
        fld, cons = refresh(post)
        add_row(it, result.batch, obs, result.value, rho, fld, cons, t_it)

    record.final_points = post.design.points.tolist()
    record.final_values = post.design.values.tolist()
    if persist_path is not None:
        record.save(persist_path)
    return record


def _config_dict(cfg: StrategyConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["search"].pop("psi_grid", None)    # grids are not JSON; provenance is in the problem
    return d
