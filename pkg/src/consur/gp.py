"""Gaussian process regression core.

Exact conditioning on noisy observations of a GP with constant prior mean and a
tensor-product Matern kernel, low-rank posterior updates through block Cholesky
extension, and maximum-likelihood hyperparameter fitting.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import FAMILIES, KernelSpec, cross_matrix, gram


class SingularDesignError(Exception):
    """Gram matrix stayed numerically singular after the jitter ladder."""


# Jitter ladder: nothing, then 1e-10 * sigma^2 escalating tenfold up to 1e-6 * sigma^2.
_JITTER_STEPS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def _chol_jittered(a: np.ndarray, scale: float) -> tuple[np.ndarray, float]:
    """Cholesky factor of `a`, adding scaled jitter to the diagonal if needed.

    Returns (lower factor, jitter actually used). Raises LinAlgError if even the
    largest jitter fails.
    """
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    err: Exception | None = None
    for step in _JITTER_STEPS:
        j = step * scale
        try:
            return np.linalg.cholesky(a + j * np.eye(n) if j > 0 else a), j
        except np.linalg.LinAlgError as e:
            err = e
    raise err  # type: ignore[misc]


def _duplicate_rows(x: np.ndarray, rtol: float = 1e-12) -> list[tuple[int, int]]:
    n = x.shape[0]
    span = max(float(np.ptp(x)) if x.size else 0.0, 1.0)
    pairs = []
    for i in range(n - 1):
        d = np.max(np.abs(x[i + 1:] - x[i]), axis=1)
        for k in np.flatnonzero(d <= rtol * span):
            pairs.append((i, i + 1 + int(k)))
    return pairs


@dataclass(frozen=True)
class Design:
    """Observed design: points (n, d), values (n,), homogeneous noise variance tau^2 >= 0."""

    points: np.ndarray
    values: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).ravel()
        if pts.shape[0] != vals.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {vals.shape[0]} values")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(vals)):
            raise ValueError("design contains non-finite entries")
        tau2 = float(self.noise_variance)
        if not np.isfinite(tau2) or tau2 < 0:
            raise ValueError("noise_variance must be finite and >= 0")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "noise_variance", tau2)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


class GpPosterior:
    """Immutable GP posterior with a cached Cholesky factor.

    Predictions refer to the latent (noise-free) field; the observation noise
    tau^2 enters only the conditioning of the data.
    """

    def __init__(self, kernel: KernelSpec, design: Design, mean_value: float,
                 chol: np.ndarray, alpha: np.ndarray, jitter: float):
        self.kernel = kernel
        self.design = design
        self.mean_value = float(mean_value)
        self.chol = chol            # lower Cholesky factor of K + tau^2 I (+ jitter)
        self.alpha = alpha          # (K + tau^2 I)^{-1} (y - mean)
        self.jitter = float(jitter)
        self._token: str | None = None

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def token(self) -> str:
        """Stable identifier of this posterior (kernel, mean, noise and data)."""
        if self._token is None:
            h = hashlib.sha1()
            h.update(self.kernel.family.encode())
            h.update(np.ascontiguousarray(self.kernel.lengthscales).tobytes())
            h.update(np.float64(self.kernel.variance).tobytes())
            h.update(np.float64(self.design.noise_variance).tobytes())
            h.update(np.float64(self.mean_value).tobytes())
            h.update(np.ascontiguousarray(self.design.points).tobytes())
            h.update(np.ascontiguousarray(self.design.values).tobytes())
            self._token = h.hexdigest()[:12]
        return self._token

    def whitened_cross(self, x: np.ndarray) -> np.ndarray:
        """L^{-1} k(X_train, x), shape (n, m). Zero rows when the design is empty."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.n == 0:
            return np.zeros((0, x.shape[0]))
        kxs = cross_matrix(self.kernel, self.design.points, x)
        return solve_triangular(self.chol, kxs, lower=True)

    def mean(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.n == 0:
            return np.full(x.shape[0], self.mean_value)
        kxs = cross_matrix(self.kernel, self.design.points, x)
        return self.mean_value + kxs.T @ self.alpha

    def var(self, x: np.ndarray) -> np.ndarray:
        """Posterior variance of the latent field, clipped at zero."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.n == 0:
            return np.full(x.shape[0], self.kernel.variance)
        v = self.whitened_cross(x)
        return np.maximum(self.kernel.variance - np.sum(v * v, axis=0), 0.0)

    def sd(self, x: np.ndarray) -> np.ndarray:
        return np.sqrt(self.var(x))

    def cov(self, x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
        """Posterior covariance matrix of the latent field between x and y (or x, x)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        sym = y is None
        y = x if sym else np.atleast_2d(np.asarray(y, dtype=float))
        k = cross_matrix(self.kernel, x, y)
        if self.n > 0:
            k = k - self.whitened_cross(x).T @ self.whitened_cross(y)
        if sym:
            k = 0.5 * (k + k.T)
        return k

    def mean_and_cov(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.mean(x), self.cov(x)


def fit_posterior(kernel: KernelSpec, design: Design, mean_value: float = 0.0) -> GpPosterior:
    """Condition the GP on the design.

    Factors K + tau^2 I once; near-singular Gram matrices get diagonal jitter
    from 1e-10*sigma^2 up to 1e-6*sigma^2 before SingularDesignError is raised
    (the error names duplicated design points, the usual culprit).
    """
    if design.n > 0 and design.dim != kernel.dim:
        raise ValueError(f"design dimension {design.dim} != kernel dimension {kernel.dim}")
    n = design.n
    if n == 0:
        return GpPosterior(kernel, design, mean_value, np.zeros((0, 0)), np.zeros(0), 0.0)
    a = gram(kernel, design.points)
    a[np.diag_indices(n)] += design.noise_variance
    try:
        chol, jit = _chol_jittered(a, kernel.variance)
    except np.linalg.LinAlgError:
        dups = _duplicate_rows(design.points)
        msg = "Gram matrix is numerically singular"
        if dups:
            msg += f"; duplicated design points at index pairs {dups}"
        raise SingularDesignError(msg) from None
    resid = design.values - mean_value
    alpha = solve_triangular(chol.T, solve_triangular(chol, resid, lower=True), lower=False)
    return GpPosterior(kernel, design, mean_value, chol, alpha, jit)


def update_posterior(post: GpPosterior, new_points: np.ndarray, new_values: np.ndarray) -> GpPosterior:
    """Posterior after q extra observations, via block Cholesky extension.

    Costs O(q n^2 + q^3) instead of a full O((n+q)^3) refit and agrees with
    fit_posterior on the concatenated design to floating-point accuracy.
    """
    new_points = np.atleast_2d(np.asarray(new_points, dtype=float))
    new_values = np.asarray(new_values, dtype=float).ravel()
    q = new_points.shape[0]
    if new_values.shape[0] != q:
        raise ValueError(f"{q} new points but {new_values.shape[0]} new values")
    tau2 = post.design.noise_variance
    if post.n == 0:
        return fit_posterior(post.kernel, Design(new_points, new_values, tau2), post.mean_value)

    design = Design(
        np.vstack([post.design.points, new_points]),
        np.concatenate([post.design.values, new_values]),
        tau2,
    )
    c = gram(post.kernel, new_points)
    c[np.diag_indices(q)] += tau2
    m = post.whitened_cross(new_points)                    # (n, q)
    try:
        s, jit = _chol_jittered(c - m.T @ m, post.kernel.variance)
    except np.linalg.LinAlgError:
        dups = _duplicate_rows(design.points)
        msg = "updated Gram matrix is numerically singular"
        if dups:
            msg += f"; duplicated design points at index pairs {dups}"
        raise SingularDesignError(msg) from None
    n = post.n
    chol = np.zeros((n + q, n + q))
    chol[:n, :n] = post.chol
    chol[n:, :n] = m.T
    chol[n:, n:] = s
    resid = design.values - post.mean_value
    alpha = solve_triangular(chol.T, solve_triangular(chol, resid, lower=True), lower=False)
    return GpPosterior(post.kernel, design, post.mean_value, chol, alpha, max(post.jitter, jit))


def _gls_mean(chol: np.ndarray, values: np.ndarray) -> float:
    """Generalized-least-squares estimate of a constant mean under covariance L L^T."""
    w1 = solve_triangular(chol, np.ones_like(values), lower=True)
    wy = solve_triangular(chol, values, lower=True)
    return float(w1 @ wy / (w1 @ w1))


def gls_mean(kernel: KernelSpec, design: Design) -> float:
    """Constant prior mean estimated by generalized least squares."""
    if design.n == 0:
        raise ValueError("gls_mean needs at least one observation")
    a = gram(kernel, design.points)
    a[np.diag_indices(design.n)] += design.noise_variance
    chol, _ = _chol_jittered(a, kernel.variance)
    return _gls_mean(chol, design.values)


def log_marginal_likelihood(kernel: KernelSpec, design: Design,
                            mean_value: float | None = None) -> float:
    """Log marginal likelihood of the design under the GP.

    mean_value=None profiles out the constant mean by GLS before evaluating.
    """
    if design.n == 0:
        return 0.0
    a = gram(kernel, design.points)
    a[np.diag_indices(design.n)] += design.noise_variance
    chol, _ = _chol_jittered(a, kernel.variance)
    mu = _gls_mean(chol, design.values) if mean_value is None else float(mean_value)
    w = solve_triangular(chol, design.values - mu, lower=True)
    return float(-0.5 * (w @ w) - np.sum(np.log(np.diag(chol))) - 0.5 * design.n * np.log(2 * np.pi))


@dataclass(frozen=True)
class MleResult:
    """Outcome of mle_fit. `improved` is False when no restart beat its own start value."""

    kernel: KernelSpec
    noise_variance: float
    mean_value: float
    log_likelihood: float
    improved: bool


def mle_fit(design: Design, bounds: dict, family: str = "matern32",
            n_starts: int = 8, seed: int = 0, estimate_noise: bool = False,
            mean_value: float | None = None) -> MleResult:
    """Multistart maximum-likelihood fit of kernel hyperparameters.

    Parameters
    ----------
    bounds : dict
        {"lengthscale": (lo, hi), "variance": (lo, hi)[, "noise": (lo, hi)]},
        all strictly positive; searched in log space. "noise" is required when
        estimate_noise is True, otherwise the design's noise_variance is kept.
    mean_value : float or None
        Fixed constant mean, or None to profile it out by GLS at each step.

    Starts are a seeded Latin hypercube over the log-bounds box; each runs a
    bounded Nelder-Mead. The best point is returned even if no start improved,
    with `improved` False in that case.
    """
    from scipy.optimize import minimize

    from .sampling import lhs_maximin, seed_stream

    if family not in FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}")
    if design.n < 2:
        raise ValueError("mle_fit needs at least two observations")
    for key in ("lengthscale", "variance") + (("noise",) if estimate_noise else ()):
        if key not in bounds:
            raise ValueError(f"bounds missing {key!r}")
        lo, hi = bounds[key]
        if not (0 < lo < hi) or not np.isfinite(hi):
            raise ValueError(f"bounds[{key!r}] must satisfy 0 < lo < hi < inf")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")

    d = design.dim
    log_bounds = [tuple(np.log(bounds["lengthscale"]))] * d + [tuple(np.log(bounds["variance"]))]
    if estimate_noise:
        log_bounds.append(tuple(np.log(bounds["noise"])))
    log_bounds_arr = np.asarray(log_bounds)
    n_par = len(log_bounds)

    def build(theta: np.ndarray) -> tuple[KernelSpec, Design]:
        ls = np.exp(theta[:d])
        var = float(np.exp(theta[d]))
        ker = KernelSpec(family, ls, var)
        if estimate_noise:
            des = Design(design.points, design.values, float(np.exp(theta[d + 1])))
        else:
            des = design
        return ker, des

    def objective(theta: np.ndarray) -> float:
        theta = np.clip(theta, log_bounds_arr[:, 0], log_bounds_arr[:, 1])
        try:
            ker, des = build(theta)
            return -log_marginal_likelihood(ker, des, mean_value)
        except np.linalg.LinAlgError:
            return np.inf

    rng = seed_stream(seed, "mle-starts")
    unit = lhs_maximin(n_starts, n_par, rng)
    starts = log_bounds_arr[:, 0] + unit * (log_bounds_arr[:, 1] - log_bounds_arr[:, 0])

    best_theta, best_val, improved = None, np.inf, False
    for x0 in starts:
        f0 = objective(x0)
        res = minimize(objective, x0, method="Nelder-Mead", bounds=log_bounds,
                       options={"maxiter": 200 * n_par, "xatol": 1e-4, "fatol": 1e-6})
        cand_val, cand = (res.fun, res.x) if res.fun < f0 else (f0, x0)
        if res.fun < f0 - 1e-12:
            improved = True
        if cand_val < best_val:
            best_val, best_theta = cand_val, np.clip(cand, log_bounds_arr[:, 0],
                                                     log_bounds_arr[:, 1])
    ker, des = build(best_theta)
    if mean_value is None:
        a = gram(ker, des.points)
        a[np.diag_indices(des.n)] += des.noise_variance
        chol, _ = _chol_jittered(a, ker.variance)
        mu = _gls_mean(chol, des.values)
    else:
        mu = float(mean_value)
    return MleResult(ker, des.noise_variance, mu, -best_val, improved)
