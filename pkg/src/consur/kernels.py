"""Tensor-product Matern covariance kernels.

Stationary anisotropic kernels of the form

    k(x, y) = variance * prod_i k1(|x_i - y_i| / lengthscale_i)

where k1 is the one-dimensional Matern correlation with smoothness 3/2 or 5/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("matern32", "matern52")

_SQRT3 = np.sqrt(3.0)
_SQRT5 = np.sqrt(5.0)


def _corr_matern32(r: np.ndarray) -> np.ndarray:
    a = _SQRT3 * r
    return (1.0 + a) * np.exp(-a)


def _corr_matern52(r: np.ndarray) -> np.ndarray:
    a = _SQRT5 * r
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


_CORR = {"matern32": _corr_matern32, "matern52": _corr_matern52}


@dataclass(frozen=True)
class KernelSpec:
    """Anisotropic tensor-product Matern kernel.

    Parameters
    ----------
    family : str
        "matern32" or "matern52".
    lengthscales : array_like, shape (d,)
        Positive per-dimension lengthscales.
    variance : float
        Process variance sigma^2 > 0.
    """

    family: str
    lengthscales: np.ndarray
    variance: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a non-empty 1-d array")
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be finite and positive")
        v = float(self.variance)
        if not np.isfinite(v) or v <= 0:
            raise ValueError("variance must be finite and positive")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", v)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def cross_matrix(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Covariance matrix k(x_i, y_j), shape (n, m)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[1] != spec.dim or y.shape[1] != spec.dim:
        raise ValueError(
            f"points have dimension {x.shape[1]}/{y.shape[1]}, kernel expects {spec.dim}"
        )
    corr = _CORR[spec.family]
    out = np.full((x.shape[0], y.shape[0]), spec.variance)
    # tensor product over dimensions keeps memory at one (n, m) slab per factor
    for i in range(spec.dim):
        r = np.abs(x[:, i, None] - y[None, :, i]) / spec.lengthscales[i]
        out *= corr(r)
    return out


def gram(spec: KernelSpec, x: np.ndarray) -> np.ndarray:
    """Symmetric Gram matrix k(x_i, x_j)."""
    k = cross_matrix(spec, x, x)
    return 0.5 * (k + k.T)


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Kernel value between two single points."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return float(cross_matrix(spec, x, y)[0, 0])
