"""Conservative excursion-set estimates with controlled false positives.

The conservative estimate at level alpha is the largest Vorob'ev quantile
Q_rho whose joint inclusion probability psi(rho) = P(Q_rho subset of the
excursion set | data) still reaches alpha. psi is estimated by Monte Carlo on
an l-point subsample of the quantile and the level is found by dichotomic
search under common random numbers, which keeps the empirical psi-hat exactly
monotone along the search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .excursion import CoverageField, ExcursionProblem, IntegrationGrid, QuantileEstimate, \
    coverage, quantile_at
from .gp import GpPosterior, _chol_jittered
from .sampling import seed_stream


@dataclass(frozen=True)
class InclusionEstimate:
    """Monte Carlo estimate of P(all selected quantile points lie in the excursion set)."""

    rho: float
    points: np.ndarray        # (l, d) selected representatives, subset of Q_rho
    psi: float
    std_error: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if not (0.0 <= self.psi <= 1.0):
            raise ValueError("psi must lie in [0, 1]")

    @property
    def ell(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class SearchConfig:
    """Dichotomic-search settings for the conservative level.

    rho_min anchors the search: for alpha > 1/2 any feasible level exceeds it,
    so the default 0.5 only discards levels the search could never return.
    psi_grid, when set, evaluates inclusion on its own (usually finer) point
    set instead of the integration grid.
    """

    rho_min: float = 0.5
    rho_max: float = 1.0
    tol: float = 1e-4
    ell_max: int = 100
    n_samples: int = 10_000
    seed: int = 0
    psi_grid: IntegrationGrid | None = None

    def __post_init__(self):
        if not (0.0 <= self.rho_min < self.rho_max <= 1.0):
            raise ValueError("need 0 <= rho_min < rho_max <= 1")
        if self.tol <= 0 or self.ell_max < 1 or self.n_samples < 100:
            raise ValueError("tol > 0, ell_max >= 1 and n_samples >= 100 required")


@dataclass(frozen=True)
class TraceRow:
    rho: float
    ell: int
    psi: float
    std_error: float
    decision: str   # "accept" if psi-hat >= alpha else "reject"


@dataclass(frozen=True)
class ConservativeResult:
    rho: float
    quantile: QuantileEstimate
    inclusion: InclusionEstimate
    trace: tuple[TraceRow, ...]
    search_failed: bool = False


def _farthest_point_order(points: np.ndarray, start: int, count: int) -> np.ndarray:
    """Greedy maximin traversal: start, then repeatedly the point farthest from the pick so far."""
    n = points.shape[0]
    count = min(count, n)
    order = np.empty(count, dtype=int)
    order[0] = start
    dist = np.linalg.norm(points - points[start], axis=1)
    for k in range(1, count):
        nxt = int(np.argmax(dist))
        order[k] = nxt
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return order


def _orthant_draws(post: GpPosterior, prob: ExcursionProblem, points: np.ndarray,
                   n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean matrix (n_samples, l): draw r lies in the target at point j.

    Antithetic pairs mu +/- L g share normals; n_samples is rounded up to even.
    """
    half = (n_samples + 1) // 2
    mu, cov = post.mean_and_cov(points)
    chol, _ = _chol_jittered(cov, post.kernel.variance)
    g = rng.standard_normal((points.shape[0], half))
    dev = (chol @ g).T
    values = np.vstack([mu + dev, mu - dev])
    return prob.in_set(values)


def inclusion_probability(post: GpPosterior, prob: ExcursionProblem, members: np.ndarray,
                          ell: int | None = None, n_samples: int = 10_000,
                          seed: int = 0) -> InclusionEstimate:
    """Estimate psi = P(excursion covers every selected member point | data).

    members is a mask over prob.grid points (a Vorob'ev quantile). At most
    ell points are kept by farthest-point selection started at the member of
    highest coverage; the orthant probability over those points is estimated
    from n_samples antithetic Cholesky draws of the posterior. Empty masks use
    the convention psi(empty) = 1.
    """
    members = np.asarray(members, dtype=bool).ravel()
    if members.shape[0] != prob.grid.m:
        raise ValueError("member mask length disagrees with the problem grid")
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    idx = np.flatnonzero(members)
    if idx.size == 0:
        return InclusionEstimate(float("nan"), np.zeros((0, prob.grid.dim)), 1.0, 0.0,
                                 n_samples, seed)
    if ell is None:
        ell = min(idx.size, 100)
    if ell < 1:
        raise ValueError("ell must be >= 1 for a nonempty member mask")
    ell = min(ell, idx.size)
    pts = prob.grid.points[idx]
    p_members = coverage(post, prob, pts).values
    order = _farthest_point_order(pts, int(np.argmax(p_members)), ell)
    sel = pts[order]
    rng = seed_stream(seed, "inclusion")
    hits = _orthant_draws(post, prob, sel, n_samples, rng)
    ind = hits.all(axis=1)
    n_eff = ind.shape[0]
    psi = float(ind.mean())
    se = float(np.sqrt(psi * (1.0 - psi) / n_eff))
    return InclusionEstimate(float("nan"), sel, psi, se, n_eff, seed)


def conservative_level(post: GpPosterior, prob: ExcursionProblem, fld: CoverageField,
                       grid: IntegrationGrid, cfg: SearchConfig | None = None) -> ConservativeResult:
    """Smallest level rho (to cfg.tol) whose quantile is included in the excursion
    set with estimated probability >= prob.alpha.

    Common random numbers across the whole search: one farthest-point prefix of
    the members at rho_min is simulated once, and every psi-hat evaluation uses
    the prefix points that remain members at its level. Since those subsets are
    nested in rho and share draws, the psi-hat trace is exactly nondecreasing
    and the bisection is well posed.
    """
    cfg = cfg or SearchConfig()
    alpha = prob.alpha
    if cfg.psi_grid is not None:
        psi_pts = cfg.psi_grid.points
        psi_p = coverage(post, prob, psi_pts).values
    else:
        psi_pts = grid.points
        psi_p = fld.values

    trace: list[TraceRow] = []
    master = np.flatnonzero(psi_p >= cfg.rho_min)

    if master.size == 0:
        # no candidate points at all: every quantile in range is empty, trivially included
        est = InclusionEstimate(cfg.rho_min, np.zeros((0, grid.dim)), 1.0, 0.0,
                                cfg.n_samples, cfg.seed)
        q = quantile_at(fld, grid, cfg.rho_min, kind="conservative")
        return ConservativeResult(cfg.rho_min, q, est, tuple(trace), False)

    pts = psi_pts[master]
    p_master = psi_p[master]
    order = _farthest_point_order(pts, int(np.argmax(p_master)), min(cfg.ell_max, master.size))
    prefix_pts = pts[order]
    prefix_p = p_master[order]
    rng = seed_stream(cfg.seed, "conservative")
    hits = _orthant_draws(post, prob, prefix_pts, cfg.n_samples, rng)
    n_eff = hits.shape[0]

    def evaluate(rho: float) -> tuple[float, float, int]:
        sel = prefix_p >= rho
        ell = int(sel.sum())
        if ell == 0:
            return 1.0, 0.0, 0
        ind = hits[:, sel].all(axis=1)
        psi = float(ind.mean())
        return psi, float(np.sqrt(psi * (1.0 - psi) / n_eff)), ell

    def record(rho: float, psi: float, se: float, ell: int) -> None:
        trace.append(TraceRow(float(rho), ell, psi, se, "accept" if psi >= alpha else "reject"))

    def result_at(rho: float, psi: float, se: float, failed: bool = False) -> ConservativeResult:
        sel = prefix_p >= rho
        est = InclusionEstimate(float(rho), prefix_pts[sel], psi, se, n_eff, cfg.seed)
        q = quantile_at(fld, grid, rho, kind="conservative")
        if failed:
            q = QuantileEstimate(float(rho), np.zeros(grid.m, dtype=bool), 0.0, "conservative")
        return ConservativeResult(float(rho), q, est, tuple(trace), failed)

    psi_lo, se_lo, ell_lo = evaluate(cfg.rho_min)
    record(cfg.rho_min, psi_lo, se_lo, ell_lo)
    if psi_lo >= alpha:
        return result_at(cfg.rho_min, psi_lo, se_lo)

    psi_hi, se_hi, ell_hi = evaluate(cfg.rho_max)
    record(cfg.rho_max, psi_hi, se_hi, ell_hi)
    if psi_hi < alpha:
        return result_at(cfg.rho_max, psi_hi, se_hi, failed=True)

    lo, hi = cfg.rho_min, cfg.rho_max
    while hi - lo > cfg.tol:
        mid = 0.5 * (lo + hi)
        psi_m, se_m, ell_m = evaluate(mid)
        record(mid, psi_m, se_m, ell_m)
        if psi_m >= alpha:
            hi, psi_hi, se_hi = mid, psi_m, se_m
        else:
            lo = mid
    return result_at(hi, psi_hi, se_hi)


@dataclass(frozen=True)
class BoundReport:
    """Simulation check of the false-positive bound for a conservative estimate."""

    expected_type1: float        # E[mu(CE minus excursion)] estimate
    measure: float               # mu(CE)
    ratio: float                 # expected_type1 / measure (0 when CE empty)
    ratio_se: float
    inclusion_frequency: float   # fraction of simulations with CE inside the excursion
    inclusion_se: float
    n_sims: int
    bound: float                 # 1 - alpha
    within_bound: bool           # ratio <= bound + 3 * ratio_se


def verify_bound(estimate: QuantileEstimate, post: GpPosterior, prob: ExcursionProblem,
                 grid: IntegrationGrid, n_sims: int = 200, seed: int = 0) -> BoundReport:
    """Check E[mu(CE minus excursion)] / mu(CE) <= 1 - alpha by conditional simulation.

    Draws n_sims posterior fields on the full grid; for each, measures the part
    of the estimate outside the realized excursion set and whether the estimate
    was fully included.
    """
    from .sampling import simulate

    members = estimate.members
    mu_ce = float(grid.weights[members].sum())
    bound = 1.0 - prob.alpha
    if mu_ce == 0.0:
        return BoundReport(0.0, 0.0, 0.0, 0.0, 1.0, 0.0, n_sims, bound, True)
    ens = simulate(post, grid.points, n_sims, seed_stream(seed, "verify-bound"))
    in_target = prob.in_set(ens.values)                       # (R, m)
    miss = members[None, :] & ~in_target
    g1 = miss @ grid.weights                                  # mu(CE \ Gamma_r) per draw
    ratios = g1 / mu_ce
    ratio = float(ratios.mean())
    ratio_se = float(ratios.std(ddof=1) / np.sqrt(n_sims)) if n_sims > 1 else 0.0
    included = ~miss.any(axis=1)
    freq = float(included.mean())
    freq_se = float(np.sqrt(freq * (1.0 - freq) / n_sims))
    return BoundReport(float(g1.mean()), mu_ce, ratio, ratio_se, freq, freq_se,
                       n_sims, bound, ratio <= bound + 3.0 * ratio_se)
