"""Batch selection by derivative-free criterion minimization.

The criteria are cheap but gradient-free, so each batch point is found by
multistart Nelder-Mead seeded from the best members of a scrambled Sobol
candidate pool. Greedy construction (one point at a time, earlier points
frozen) keeps the search dimension at d for any q; joint mode searches X^q
directly for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .sampling import seed_stream, sobol_points

MODES = ("greedy", "joint")


class CriterionEvaluationError(RuntimeError):
    """Criterion raised or returned a non-finite value; carries the candidate batch."""

    def __init__(self, message: str, candidate: np.ndarray):
        super().__init__(f"{message} at candidate batch {np.asarray(candidate).tolist()}")
        self.candidate = np.asarray(candidate)


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 4
    local_iters: int = 200
    pool_size: int = 128
    mode: str = "greedy"
    seed: int = 0
    xatol_rel: float = 1e-6     # Nelder-Mead xatol as a fraction of the box width
    fatol: float = 1e-12

    def __post_init__(self):
        if self.starts < 1 or self.pool_size < 1 or self.local_iters < 1:
            raise ValueError("starts, pool_size and local_iters must be >= 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class OptTraceRow:
    step: int          # greedy step index (0 for joint mode)
    start: int         # -1 for the pool screen, otherwise local-search start id
    iterations: int
    value: float       # best value seen by this stage


@dataclass(frozen=True)
class OptimizeResult:
    batch: np.ndarray
    value: float
    trace: tuple[OptTraceRow, ...]


def _checked(evaluate, batch: np.ndarray) -> float:
    try:
        v = float(evaluate(batch))
    except Exception as e:
        if isinstance(e, CriterionEvaluationError):
            raise
        raise CriterionEvaluationError(f"criterion evaluation failed ({e})", batch) from e
    if not np.isfinite(v):
        raise CriterionEvaluationError(f"criterion returned non-finite value {v}", batch)
    return v


def _search_over(f, box: np.ndarray, cfg: OptimizerConfig, seed_name: str,
                 step: int, trace: list[OptTraceRow]) -> tuple[np.ndarray, float]:
    """Pool screen + multistart Nelder-Mead over `box` (possibly a flattened X^q)."""
    dim = box.shape[0]
    pool = sobol_points(cfg.pool_size, dim, seed_stream(cfg.seed, seed_name), box)
    vals = np.array([f(x) for x in pool])
    order = np.argsort(vals, kind="stable")
    best_x, best_v = pool[order[0]].copy(), float(vals[order[0]])
    trace.append(OptTraceRow(step, -1, cfg.pool_size, best_v))
    xatol = cfg.xatol_rel * float(np.max(box[:, 1] - box[:, 0]))
    for sid, idx in enumerate(order[: cfg.starts]):
        res = minimize(f, pool[idx], method="Nelder-Mead",
                       bounds=[tuple(row) for row in box],
                       options={"maxiter": cfg.local_iters, "xatol": xatol,
                                "fatol": cfg.fatol, "adaptive": dim > 2})
        cand_v = float(res.fun)
        cand_x = np.clip(res.x, box[:, 0], box[:, 1])
        local_best = min(cand_v, float(vals[idx]))
        trace.append(OptTraceRow(step, sid, int(res.nit), local_best))
        if cand_v < best_v:
            best_x, best_v = cand_x, cand_v
    return best_x, best_v


def optimize_batch(evaluate, box, q: int, cfg: OptimizerConfig | None = None) -> OptimizeResult:
    """Minimize a batch criterion over X^q.

    evaluate takes a (k, d) array (k <= q in greedy mode) and returns a float.
    The returned value is never above the best scanned pool candidate, and the
    batch is clipped into the box. Deterministic for a fixed cfg.seed.
    """
    cfg = cfg or OptimizerConfig()
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be (d, 2) with lo < hi")
    if q < 1:
        raise ValueError("q must be >= 1")
    d = box.shape[0]
    trace: list[OptTraceRow] = []

    if cfg.mode == "joint":
        big_box = np.tile(box, (q, 1))

        def f(z):
            return _checked(evaluate, np.clip(z.reshape(q, d), box[:, 0], box[:, 1]))

        x, v = _search_over(f, big_box, cfg, "pool-joint", 0, trace)
        return OptimizeResult(x.reshape(q, d), v, tuple(trace))

    fixed: list[np.ndarray] = []
    value = np.inf
    for step in range(q):
        def f(x, _fixed=tuple(fixed)):
            pt = np.clip(x, box[:, 0], box[:, 1])
            return _checked(evaluate, np.vstack([*_fixed, pt]) if _fixed else pt[None, :])

        x, value = _search_over(f, box, cfg, f"pool-{step}", step, trace)
        fixed.append(x)
    return OptimizeResult(np.vstack(fixed), value, tuple(trace))
