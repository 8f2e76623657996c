"""Closed-form one-step-lookahead SUR criteria.

For a candidate batch of q evaluations, the posterior after observing the batch
has a known standard deviation, and the future coverage at any point u is
Phi(a(u) + b(u)' Y) with Y the centered batch observations. The expected
Vorob'ev uncertainty (J) and expected type-II uncertainty (JT2) of the future
posterior then reduce to bivariate normal CDFs in (a, gamma = b'K_q b); IMSE and
targeted IMSE are the classical variance-based baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

from .bvn import bvn_cdf
from .excursion import ExcursionProblem, IntegrationGrid
from .gp import GpPosterior, SingularDesignError, _chol_jittered
from .kernels import cross_matrix, gram

# s2_future below RESOLVED_REL * sigma^2 means the batch determines the point
# exactly; gamma below GAMMA_TOL means it learns nothing there. Both classes of
# rows take their exact limits instead of the closed form.
RESOLVED_REL = 1e-9
GAMMA_TOL = 1e-10

CRITERION_KINDS = ("jn", "jt2", "imse", "timse")


@dataclass(frozen=True)
class CriterionSpec:
    """Which criterion a strategy minimizes.

    rho is required for the quantile-based kinds ("jn", "jt2") and must lie in
    (0, 1); level-free kinds ignore it.
    """

    kind: str
    q: int = 1
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in CRITERION_KINDS:
            raise ValueError(f"kind must be one of {CRITERION_KINDS}")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.kind in ("jn", "jt2") and self.rho is not None:
            if not (0.0 < self.rho < 1.0):
                raise ValueError("rho must lie in (0, 1)")


@dataclass(frozen=True)
class LookaheadAlgebra:
    """Per-grid-point lookahead quantities for one candidate batch.

    Rows with `resolved` True have sd_future = 0 (batch determines the point);
    their a, b, gamma are not meaningful and are stored as nan/inf.
    `uninformative` marks rows the batch cannot influence (gamma = 0).
    """

    a: np.ndarray               # (m,)
    b: np.ndarray               # (q, m)
    gamma: np.ndarray           # (m,)
    sd_future: np.ndarray       # (m,)
    batch_cov: np.ndarray       # (q, q) K_q including observation noise
    resolved: np.ndarray        # (m,) bool
    uninformative: np.ndarray   # (m,) bool


class CriterionEvaluator:
    """Caches the per-grid posterior quantities shared by every candidate batch.

    Criterion evaluation inside an optimizer is then one q x m kernel block,
    two triangular solves against small matrices and a vectorized bivariate
    CDF, instead of a full posterior prediction per candidate.
    """

    def __init__(self, post: GpPosterior, prob: ExcursionProblem,
                 grid: IntegrationGrid | None = None):
        grid = prob.grid if grid is None else grid
        self.post = post
        self.prob = prob
        self.grid = grid
        u = grid.points
        self.weights = grid.weights
        self._vu = post.whitened_cross(u)                  # (n, m)
        self.mean_u = post.mean(u)
        self.s2_n = np.maximum(
            post.kernel.variance - np.sum(self._vu * self._vu, axis=0), 0.0)
        self.delta = prob.signed_delta(self.mean_u)        # positive inside the target
        s = np.sqrt(self.s2_n)
        pos = s > 0
        p = np.empty(u.shape[0])
        p[pos] = ndtr(self.delta[pos] / s[pos])
        p[~pos] = np.where(self.delta[~pos] > 0, 1.0,
                           np.where(self.delta[~pos] < 0, 0.0, 0.5))
        self.p_n = p
        # current-posterior predictive density of the threshold, for tIMSE
        s_pred = np.sqrt(self.s2_n + post.design.noise_variance)
        dens = np.zeros(u.shape[0])
        okd = s_pred > 0
        z = (prob.threshold - self.mean_u[okd]) / s_pred[okd]
        dens[okd] = np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * s_pred[okd])
        self.t_density = dens
        self._eps_res = RESOLVED_REL * post.kernel.variance

    def _batch_blocks(self, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """K_q Cholesky and whitened posterior cross-covariance batch -> grid."""
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        post = self.post
        k_bu = cross_matrix(post.kernel, batch, self.grid.points)
        c_bb = gram(post.kernel, batch)
        if post.n > 0:
            v_b = post.whitened_cross(batch)
            k_bu -= v_b.T @ self._vu
            c_bb -= v_b.T @ v_b
            c_bb = 0.5 * (c_bb + c_bb.T)
        q = batch.shape[0]
        c_bb[np.diag_indices(q)] += post.design.noise_variance
        try:
            s_chol, _ = _chol_jittered(c_bb, post.kernel.variance)
        except np.linalg.LinAlgError:
            raise SingularDesignError(
                "batch covariance K_q is numerically singular") from None
        w = solve_triangular(s_chol, k_bu, lower=True)     # (q, m)
        return batch, s_chol, w

    def _rows(self, batch) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(a, gamma, s2_future, resolved, uninformative) over the grid."""
        _, _, w = self._batch_blocks(batch)
        gain = np.sum(w * w, axis=0)
        s2_f = np.maximum(self.s2_n - gain, 0.0)
        resolved = s2_f <= self._eps_res
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(resolved, np.inf, gain / s2_f)
            a = np.where(resolved, np.nan, self.delta / np.sqrt(s2_f))
        uninformative = ~resolved & (gamma <= GAMMA_TOL)
        return a, gamma, s2_f, resolved, uninformative

    def lookahead(self, batch) -> LookaheadAlgebra:
        batch, s_chol, w = self._batch_blocks(batch)
        gain = np.sum(w * w, axis=0)
        s2_f = np.maximum(self.s2_n - gain, 0.0)
        resolved = s2_f <= self._eps_res
        s_f = np.sqrt(s2_f)
        with np.errstate(divide="ignore", invalid="ignore"):
            gamma = np.where(resolved, np.inf, gain / s2_f)
            a = np.where(resolved, np.nan, self.delta / s_f)
            b = np.where(resolved[None, :], np.nan,
                         solve_triangular(s_chol.T, w, lower=False) / s_f[None, :])
        uninformative = ~resolved & (gamma <= GAMMA_TOL)
        return LookaheadAlgebra(a, b, gamma, s_f, s_chol @ s_chol.T, resolved, uninformative)

    def _quantile_rows(self, batch, rho: float, with_type1: bool) -> np.ndarray:
        """Integrand rows of JT2 (and optionally the extra J terms)."""
        if not (0.0 < rho < 1.0):
            raise ValueError("rho must lie in (0, 1)")
        a, gamma, _, resolved, uninf = self._rows(batch)
        c = ndtri(rho)
        p = self.p_n
        rows = np.zeros(a.shape[0])
        general = ~resolved & ~uninf
        if np.any(general):
            ag, gg = a[general], gamma[general]
            sd1 = np.sqrt(1.0 + gg)
            sdg = np.sqrt(gg)
            h = ag / sd1
            k = (c - ag) / sdg
            r = -sdg / sd1
            t2 = bvn_cdf(h, k, r)
            if with_type1:
                rows[general] = 2.0 * t2 - p[general] + ndtr((ag - c) / sdg)
            else:
                rows[general] = t2
        if np.any(uninf):
            pu = p[uninf]
            missed = np.where(pu < rho, pu, 0.0)
            if with_type1:
                rows[uninf] = missed + np.where(pu >= rho, 1.0 - pu, 0.0)
            else:
                rows[uninf] = missed
        # resolved rows contribute exactly zero: the batch decides membership
        return rows

    def jn(self, batch, rho: float) -> float:
        """Expected future Vorob'ev uncertainty at level rho after the batch."""
        return float(np.sum(self.weights * self._quantile_rows(batch, rho, True)))

    def jt2(self, batch, rho: float) -> float:
        """Expected future type-II (missed-volume) uncertainty at level rho."""
        return float(np.sum(self.weights * self._quantile_rows(batch, rho, False)))

    def imse(self, batch) -> float:
        """Integrated future posterior variance."""
        _, _, s2_f, _, _ = self._rows(batch)
        return float(np.sum(self.weights * s2_f))

    def timse(self, batch) -> float:
        """Future variance integrated against the threshold's predictive density."""
        _, _, s2_f, _, _ = self._rows(batch)
        return float(np.sum(self.weights * s2_f * self.t_density))

    def value(self, spec: CriterionSpec, batch, rho: float | None = None) -> float:
        level = spec.rho if rho is None else rho
        if spec.kind == "jn":
            return self.jn(batch, level)
        if spec.kind == "jt2":
            return self.jt2(batch, level)
        if spec.kind == "imse":
            return self.imse(batch)
        return self.timse(batch)


def lookahead(post: GpPosterior, prob: ExcursionProblem, batch,
              points) -> LookaheadAlgebra:
    """Lookahead algebra rows for one batch at arbitrary points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    grid = IntegrationGrid.from_points(
        points, np.full(points.shape[0], box_volume_of(prob) / points.shape[0]),
        prob.box, "lookahead")
    return CriterionEvaluator(post, prob, grid).lookahead(batch)


def box_volume_of(prob: ExcursionProblem) -> float:
    return float(np.prod(prob.box[:, 1] - prob.box[:, 0]))


def criterion_jn(post: GpPosterior, prob: ExcursionProblem, grid: IntegrationGrid,
                 batch, rho: float) -> float:
    return CriterionEvaluator(post, prob, grid).jn(batch, rho)


def criterion_jt2(post: GpPosterior, prob: ExcursionProblem, grid: IntegrationGrid,
                  batch, rho: float) -> float:
    return CriterionEvaluator(post, prob, grid).jt2(batch, rho)


def criterion_imse(post: GpPosterior, grid: IntegrationGrid, batch,
                   prob: ExcursionProblem | None = None) -> float:
    """IMSE needs no threshold; prob is accepted for interface uniformity."""
    dummy = prob or _variance_problem(grid)
    return CriterionEvaluator(post, dummy, grid).imse(batch)


def criterion_timse(post: GpPosterior, prob: ExcursionProblem, grid: IntegrationGrid,
                    batch) -> float:
    return CriterionEvaluator(post, prob, grid).timse(batch)


def _variance_problem(grid: IntegrationGrid) -> ExcursionProblem:
    # threshold/orientation are irrelevant to pure variance integrals
    return ExcursionProblem(0.0, "above", 0.5, grid.box, grid)
