"""Conservative excursion-set estimation and SUR sequential design under GP models.

The package estimates excursion sets of expensive black-box functions through a
Gaussian process posterior: Vorob'ev quantiles and expectations of the random
excursion set, conservative estimates whose false-positive volume is controlled
at a user level, and sequential "stepwise uncertainty reduction" designs that
minimize closed-form lookahead criteria tied to those estimates.
"""

from .kernels import KernelSpec, kernel_eval, cross_matrix, gram
from .gp import (
    Design,
    GpPosterior,
    SingularDesignError,
    fit_posterior,
    update_posterior,
    gls_mean,
    log_marginal_likelihood,
    mle_fit,
)
from .sampling import (
    SimulationEnsemble,
    seed_stream,
    simulate,
    lhs_maximin,
    sobol_points,
)
from .excursion import (
    ExcursionProblem,
    IntegrationGrid,
    CoverageField,
    QuantileEstimate,
    EmpiricalErrors,
    coverage,
    quantile_at,
    expected_measure,
    vorobev_level,
    vorobev_uncertainty,
    type2_uncertainty,
    type1_expected,
    empirical_errors,
)
from .conservative import (
    SearchConfig,
    InclusionEstimate,
    ConservativeResult,
    BoundReport,
    inclusion_probability,
    conservative_level,
    verify_bound,
)
from .bvn import bvn_cdf, phi2, InvalidCovarianceError
from .criteria import (
    CriterionSpec,
    LookaheadAlgebra,
    CriterionEvaluator,
    lookahead,
    criterion_jn,
    criterion_jt2,
    criterion_imse,
    criterion_timse,
)
from .optimize import OptimizerConfig, OptimizeResult, CriterionEvaluationError, optimize_batch
from .strategy import StrategyConfig, IterationRecord, RunRecord, run_strategy
from .benchmark import BenchmarkConfig, GridPathObjective, benchmark_gp, draw_path_objectives, aggregate
from .config import ConfigError
from .report import report

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "kernel_eval", "cross_matrix", "gram",
    "Design", "GpPosterior", "SingularDesignError",
    "fit_posterior", "update_posterior", "gls_mean", "log_marginal_likelihood", "mle_fit",
    "SimulationEnsemble", "seed_stream", "simulate", "lhs_maximin", "sobol_points",
    "ExcursionProblem", "IntegrationGrid", "CoverageField", "QuantileEstimate",
    "EmpiricalErrors", "coverage", "quantile_at", "expected_measure", "vorobev_level",
    "vorobev_uncertainty", "type2_uncertainty", "type1_expected", "empirical_errors",
    "SearchConfig", "InclusionEstimate", "ConservativeResult", "BoundReport",
    "inclusion_probability", "conservative_level", "verify_bound",
    "bvn_cdf", "phi2", "InvalidCovarianceError",
    "CriterionSpec", "LookaheadAlgebra", "CriterionEvaluator", "lookahead",
    "criterion_jn", "criterion_jt2", "criterion_imse", "criterion_timse",
    "OptimizerConfig", "OptimizeResult", "CriterionEvaluationError", "optimize_batch",
    "StrategyConfig", "IterationRecord", "RunRecord", "run_strategy",
    "BenchmarkConfig", "GridPathObjective", "benchmark_gp", "draw_path_objectives",
    "aggregate", "ConfigError", "report",
    "__version__",
]
