"""GP sample-path benchmark harness.

Ground truth is a GP path realized once on a fixed fine discretization;
arbitrary queries are answered by conditional-mean interpolation from the grid
values, which makes the true excursion set computable by masking the same
interpolant. All strategies for one (initial design, replication) pair see the
same path, so differences are attributable to the sampling criteria.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .excursion import ExcursionProblem, IntegrationGrid
from .gp import _chol_jittered
from .kernels import KernelSpec, cross_matrix, gram
from .optimize import OptimizerConfig
from .conservative import SearchConfig
from .sampling import lhs_maximin, seed_stream, sobol_points
from .strategy import RunRecord, StrategyConfig, run_strategy


class GridPathObjective:
    """A GP sample path as a deterministic objective.

    The path is drawn jointly at `grid_points`; any query point x gets the
    conditional mean of the field at x given the full path on the grid. On the
    grid itself this interpolates the drawn values.
    """

    def __init__(self, kernel: KernelSpec, mean_value: float, grid_points: np.ndarray,
                 path_values: np.ndarray, weights: np.ndarray):
        self.kernel = kernel
        self.mean_value = float(mean_value)
        self.grid_points = grid_points
        self.path_values = path_values
        self._w = weights                     # K^{-1} (path - mean), precomputed

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = cross_matrix(self.kernel, x, self.grid_points)
        return self.mean_value + k @ self._w

    def truth_mask(self, points: np.ndarray, prob: ExcursionProblem) -> np.ndarray:
        return prob.in_set(self(points))


def draw_path_objectives(kernel: KernelSpec, mean_value: float, grid_points: np.ndarray,
                         n_paths: int, seed: int) -> list[GridPathObjective]:
    """Draw several paths on one grid, factoring the prior covariance once."""
    g = gram(kernel, grid_points)
    chol, _ = _chol_jittered(g, kernel.variance)
    rng = seed_stream(seed, "benchmark-paths")
    objectives = []
    for _ in range(n_paths):
        path = mean_value + chol @ rng.standard_normal(grid_points.shape[0])
        # weights solve K w = path - mean through the factor already at hand
        w = solve_triangular(chol.T, solve_triangular(chol, path - mean_value, lower=True),
                             lower=False)
        objectives.append(GridPathObjective(kernel, mean_value, grid_points, path, w))
    return objectives


@dataclass(frozen=True)
class BenchmarkConfig:
    """Scaled GP benchmark over several strategies, initial designs and paths.

    Defaults follow the d=2 test-case parameterization (unit square, Matern
    3/2 with lengthscale 0.2, unit variance, zero mean, noise-free, target
    {Z >= 1}, alpha = 0.95). n_init defaults to 3 for d=2 and 6 for d=5.
    """

    dim: int = 2
    kernel_family: str = "matern32"
    lengthscale: float = 0.2
    variance: float = 1.0
    mean_value: float = 0.0
    noise_variance: float = 0.0
    threshold: float = 1.0
    orientation: str = "above"
    alpha: float = 0.95
    n_init: int | None = None
    m_doe: int = 3
    replications: int = 3
    iterations: int = 40
    q: int = 1
    grid_m: int | None = None                 # integration grid size; default 2000*dim
    path_per_dim: int = 100                   # d=2 path grid is path_per_dim^2 cells
    path_sobol_m: int = 2 ** 14               # d>=3 path grid size (Sobol)
    strategies: tuple[str, ...] = ("imse", "timse", "A", "B", "C")
    seed: int = 0
    optimizer: OptimizerConfig = OptimizerConfig(starts=2, local_iters=100, pool_size=48)
    search: SearchConfig = SearchConfig()

    def __post_init__(self):
        if self.dim < 1 or self.m_doe < 1 or self.replications < 1:
            raise ValueError("dim, m_doe and replications must be >= 1")
        if self.iterations < 0 or self.q < 1:
            raise ValueError("iterations >= 0 and q >= 1 required")

    @property
    def n_init_points(self) -> int:
        if self.n_init is not None:
            return self.n_init
        return 6 if self.dim >= 5 else 3

    @property
    def box(self) -> np.ndarray:
        return np.column_stack([np.zeros(self.dim), np.ones(self.dim)])

    def kernel(self) -> KernelSpec:
        return KernelSpec(self.kernel_family, np.full(self.dim, self.lengthscale),
                          self.variance)

    def problem(self) -> ExcursionProblem:
        m = self.grid_m if self.grid_m is not None else 2000 * self.dim
        grid = IntegrationGrid.sobol(self.box, m)
        return ExcursionProblem(self.threshold, self.orientation, self.alpha, self.box, grid)

    def path_grid_points(self) -> np.ndarray:
        if self.dim == 2:
            return IntegrationGrid.full_grid(self.box, self.path_per_dim).points
        if self.dim == 1:
            return np.linspace(0.0, 1.0, self.path_per_dim * self.path_per_dim)[:, None]
        return sobol_points(self.path_sobol_m, self.dim, None, self.box)


def benchmark_gp(cfg: BenchmarkConfig, progress=None) -> list[RunRecord]:
    """Run every strategy on m_doe initial designs x replications shared paths.

    The path for (doe i, replication r) is common to all strategies; each run
    gets deterministic sub-seeds. `progress`, if given, is called with a status
    string before each run.
    """
    from .gp import Design

    kernel = cfg.kernel()
    prob = cfg.problem()
    path_pts = cfg.path_grid_points()
    n_paths = cfg.m_doe * cfg.replications
    paths = draw_path_objectives(kernel, cfg.mean_value, path_pts, n_paths, cfg.seed)

    records: list[RunRecord] = []
    for doe in range(cfg.m_doe):
        doe_rng = seed_stream(cfg.seed, f"doe-{doe}")
        unit = lhs_maximin(cfg.n_init_points, cfg.dim, doe_rng)
        init_pts = cfg.box[:, 0] + unit * (cfg.box[:, 1] - cfg.box[:, 0])
        for rep in range(cfg.replications):
            objective = paths[doe * cfg.replications + rep]
            init = Design(init_pts, objective(init_pts), cfg.noise_variance)
            truth = objective.truth_mask(prob.grid.points, prob)
            for kind in cfg.strategies:
                run_seed = int(seed_stream(cfg.seed,
                                           f"run-{kind}-{doe}-{rep}").integers(2**62))
                scfg = StrategyConfig(
                    kind=kind, alpha=cfg.alpha, q=cfg.q, iterations=cfg.iterations,
                    seed=run_seed, optimizer=cfg.optimizer,
                    search=dataclasses.replace(cfg.search, seed=run_seed % (2**31)),
                )
                if progress is not None:
                    progress(f"strategy={kind} doe={doe} rep={rep}")
                rec = run_strategy(objective, scfg, prob, init, kernel,
                                   cfg.mean_value, truth_mask=truth,
                                   doe=doe, replication=rep)
                records.append(rec)
    return records


_AGG_FIELDS = (
    "rho_v", "rho_alpha", "measure_expected", "measure_vorobev", "measure_ce",
    "type1_alpha", "type2_alpha", "vorobev_unc_alpha", "vorobev_unc_median",
    "proportion_inside", "true_type1_ce", "true_type2_ce",
    "rel_vol_error_ce", "rel_vol_error_vorobev",
)


def aggregate(records: list[RunRecord]) -> list[dict]:
    """Mean and median of each metric by (strategy, iteration), NaNs ignored."""
    if not records:
        raise ValueError("no records to aggregate")
    by_key: dict[tuple[str, int], list] = {}
    for rec in records:
        for row in rec.rows:
            by_key.setdefault((rec.strategy, row.iteration), []).append(row)
    out = []
    for (strategy, iteration) in sorted(by_key, key=lambda k: (k[0], k[1])):
        rows = by_key[(strategy, iteration)]
        entry = {"strategy": strategy, "iteration": iteration, "runs": len(rows)}
        for name in _AGG_FIELDS:
            vals = np.array([getattr(r, name) for r in rows], dtype=float)
            with np.errstate(all="ignore"):
                entry[f"mean_{name}"] = float(np.nanmean(vals)) if np.any(
                    np.isfinite(vals)) else float("nan")
                entry[f"median_{name}"] = float(np.nanmedian(vals)) if np.any(
                    np.isfinite(vals)) else float("nan")
        out.append(entry)
    return out
