"""Excursion-set probability calculus on integration grids.

Coverage probabilities of the random excursion set under a GP posterior,
Vorob'ev quantiles/expectation, uncertainty functionals and empirical set
errors, all discretized on a weighted integration grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .gp import GpPosterior
from .sampling import _as_generator, sobol_points

ORIENTATIONS = ("above", "below")


def box_volume(box: np.ndarray) -> float:
    box = np.asarray(box, dtype=float)
    return float(np.prod(box[:, 1] - box[:, 0]))


def _check_box(box) -> np.ndarray:
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.ndim != 2 or box.shape[1] != 2:
        raise ValueError("box must have shape (d, 2)")
    if not np.all(np.isfinite(box)) or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box rows must be finite with lo < hi")
    return box


@dataclass(frozen=True)
class IntegrationGrid:
    """Weighted quadrature points over a box.

    Invariants: weights are nonnegative and sum to the box volume (1e-12
    relative), so sums of weighted indicators are set measures.
    """

    points: np.ndarray    # (m, d)
    weights: np.ndarray   # (m,)
    box: np.ndarray       # (d, 2)
    provenance: str

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        box = _check_box(self.box)
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights disagree in length")
        if pts.shape[1] != box.shape[0]:
            raise ValueError("points and box disagree in dimension")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        vol = box_volume(box)
        if abs(float(w.sum()) - vol) > 1e-12 * max(vol, 1.0):
            raise ValueError(f"weights sum to {w.sum()!r}, box volume is {vol!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "box", box)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @classmethod
    def sobol(cls, box, m: int, scramble_seed: int | None = None) -> "IntegrationGrid":
        box = _check_box(box)
        pts = sobol_points(m, box.shape[0], scramble_seed, box)
        w = np.full(m, box_volume(box) / m)
        return cls(pts, w, box, "sobol")

    @classmethod
    def uniform_random(cls, box, m: int, seed=0) -> "IntegrationGrid":
        box = _check_box(box)
        rng = _as_generator(seed)
        pts = box[:, 0] + rng.random((m, box.shape[0])) * (box[:, 1] - box[:, 0])
        w = np.full(m, box_volume(box) / m)
        return cls(pts, w, box, "uniform")

    @classmethod
    def full_grid(cls, box, per_dim) -> "IntegrationGrid":
        """Tensor grid of cell centers, equal weights (midpoint rule)."""
        box = _check_box(box)
        d = box.shape[0]
        per_dim = np.broadcast_to(np.asarray(per_dim, dtype=int), (d,))
        if np.any(per_dim < 1):
            raise ValueError("per_dim entries must be >= 1")
        axes = [box[i, 0] + (np.arange(per_dim[i]) + 0.5) * (box[i, 1] - box[i, 0]) / per_dim[i]
                for i in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([g.ravel() for g in mesh])
        w = np.full(pts.shape[0], box_volume(box) / pts.shape[0])
        return cls(pts, w, box, "grid")

    @classmethod
    def from_points(cls, points, weights, box, provenance: str = "custom") -> "IntegrationGrid":
        return cls(np.asarray(points, dtype=float), np.asarray(weights, dtype=float),
                   box, provenance)


@dataclass(frozen=True)
class ExcursionProblem:
    """Excursion target {f >= t} ("above") or {f <= t} ("below") on a box.

    alpha is the inclusion level for conservative estimates.
    """

    threshold: float
    orientation: str
    alpha: float
    box: np.ndarray
    grid: IntegrationGrid

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        box = _check_box(self.box)
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if self.grid.dim != box.shape[0]:
            raise ValueError("grid dimension disagrees with box")
        object.__setattr__(self, "box", box)

    def signed_delta(self, mean_values: np.ndarray) -> np.ndarray:
        """m - t for "above", t - m for "below": positive inside the target."""
        delta = np.asarray(mean_values, dtype=float) - self.threshold
        return delta if self.orientation == "above" else -delta

    def in_set(self, values: np.ndarray) -> np.ndarray:
        if self.orientation == "above":
            return np.asarray(values) >= self.threshold
        return np.asarray(values) <= self.threshold


@dataclass(frozen=True)
class CoverageField:
    """Coverage probabilities p_n(u_j) on a grid, tagged with the source posterior."""

    values: np.ndarray
    posterior: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("coverage values must lie in [0, 1]")
        object.__setattr__(self, "values", v)


def coverage(post: GpPosterior, prob: ExcursionProblem,
             points: np.ndarray | None = None) -> CoverageField:
    """P(point belongs to the excursion set | data) at the grid (or given) points.

    p = Phi(delta / s) with delta the signed mean-threshold gap; where the
    posterior is degenerate (s = 0) this is the hard indicator, with the
    convention p = 1/2 when the mean sits exactly at the threshold.
    """
    pts = prob.grid.points if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    delta = prob.signed_delta(post.mean(pts))
    s = post.sd(pts)
    pos = s > 0
    p = np.empty(pts.shape[0])
    p[pos] = ndtr(delta[pos] / s[pos])
    p[~pos] = np.where(delta[~pos] > 0, 1.0, np.where(delta[~pos] < 0, 0.0, 0.5))
    return CoverageField(p, post.token)


@dataclass(frozen=True)
class QuantileEstimate:
    """A set estimate Q_rho = {p_n >= rho} with its grid measure."""

    level: float
    members: np.ndarray   # bool mask over grid points
    measure: float
    kind: str             # "quantile" | "median" | "vorobev-expectation" | "conservative"

    def __post_init__(self):
        object.__setattr__(self, "members", np.asarray(self.members, dtype=bool).ravel())


def quantile_at(field: CoverageField, grid: IntegrationGrid, rho: float,
                kind: str = "quantile") -> QuantileEstimate:
    """Vorob'ev quantile at level rho (kind only labels the estimate)."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    members = field.values >= rho
    measure = float(grid.weights[members].sum())
    return QuantileEstimate(float(rho), members, measure, kind)


def expected_measure(field: CoverageField, grid: IntegrationGrid) -> float:
    """E[mu(excursion set)] = integral of the coverage function."""
    return float(grid.weights @ field.values)


def vorobev_level(field: CoverageField, grid: IntegrationGrid, tol: float = 1e-6) -> float:
    """Level rho_V whose quantile measure matches the expected set measure.

    Bisection on the nonincreasing measure map; on the tol-bracket the endpoint
    with the smaller measure discrepancy wins (low endpoint on ties, so the
    smallest such level is returned).
    """
    target = expected_measure(field, grid)

    def g(rho: float) -> float:
        return float(grid.weights[field.values >= rho].sum())

    g_top = g(1.0)
    if g_top >= target - 1e-15 * max(target, 1.0):
        # plateau case: every level meets the target; take the smallest level
        # whose quantile already equals Q_1
        if g(0.0) == g_top:
            return 0.0
        lo, hi = 0.0, 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if g(mid) > g_top:
                lo = mid
            else:
                hi = mid
        return hi
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if g(mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo if abs(g(lo) - target) <= abs(g(hi) - target) else hi


def vorobev_uncertainty(field: CoverageField, grid: IntegrationGrid, rho: float) -> float:
    """Expected measure of the symmetric difference between Q_rho and the excursion set."""
    p = field.values
    inside = p >= rho
    return float(grid.weights @ np.where(inside, 1.0 - p, p))


def type2_uncertainty(field: CoverageField, grid: IntegrationGrid, rho: float) -> float:
    """Expected missed volume E[mu(excursion set minus Q_rho)]."""
    p = field.values
    return float(grid.weights @ np.where(p < rho, p, 0.0))


def type1_expected(field: CoverageField, grid: IntegrationGrid, rho: float) -> float:
    """Expected false-positive volume E[mu(Q_rho minus excursion set)]."""
    p = field.values
    return float(grid.weights @ np.where(p >= rho, 1.0 - p, 0.0))


@dataclass(frozen=True)
class EmpiricalErrors:
    """Set errors of an estimate against a known truth mask on the same grid."""

    false_positive_volume: float
    false_negative_volume: float
    relative_volume_error: float
    truth_empty: bool


def empirical_errors(estimate: QuantileEstimate, truth_mask: np.ndarray,
                     grid: IntegrationGrid) -> EmpiricalErrors:
    truth = np.asarray(truth_mask, dtype=bool).ravel()
    if truth.shape[0] != grid.m:
        raise ValueError("truth mask length disagrees with grid")
    est = estimate.members
    w = grid.weights
    fp = float(w[est & ~truth].sum())
    fn = float(w[~est & truth].sum())
    vol_truth = float(w[truth].sum())
    vol_est = float(w[est].sum())
    if vol_truth == 0.0:
        return EmpiricalErrors(fp, fn, float("nan"), True)
    return EmpiricalErrors(fp, fn, abs(vol_est - vol_truth) / vol_truth, False)
