"""Bivariate normal CDF, vectorized.

Gauss-Legendre evaluation of the correlation-integral form (Drezner-Wesolowsky
as refined by Genz), accurate to about 1e-14 and safe over the whole
correlation range including |r| near 1. Used pointwise over integration grids,
hence the array-in, array-out design.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr


class InvalidCovarianceError(ValueError):
    """Covariance matrix handed to phi2 is not a valid 2x2 covariance."""


# 20-point Gauss-Legendre rule on [0, 1] (nodes symmetric about 1/2), enough for
# ~1e-14 on the smooth correlation integral; one rule for all |r| keeps the
# vectorization branch-free.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


def _bvnu(h: np.ndarray, k: np.ndarray, r: np.ndarray) -> np.ndarray:
    """P(X > h, Y > k) for standard bivariate normal with correlation r."""
    out = np.empty(h.shape)

    easy = np.abs(r) <= 0.925
    if np.any(easy):
        he, ke, re = h[easy], k[easy], r[easy]
        hs = 0.5 * (he * he + ke * ke)
        asr = np.arcsin(re)
        acc = np.zeros(he.shape)
        for x, w in zip(_GL_X, _GL_W):
            sn = np.sin(asr * x)
            acc += w * np.exp((sn * he * ke - hs) / (1.0 - sn * sn))
        out[easy] = acc * asr / (2.0 * np.pi) + ndtr(-he) * ndtr(-ke)

    hard = ~easy
    if np.any(hard):
        hh, kk, rr = h[hard], k[hard].copy(), r[hard]
        neg = rr < 0
        kk[neg] = -kk[neg]
        bvn = np.zeros(hh.shape)

        interior = np.abs(rr) < 1.0
        if np.any(interior):
            hi, ki, ri = hh[interior], kk[interior], rr[interior]
            hki = hi * ki
            a2 = (1.0 - ri) * (1.0 + ri)
            a = np.sqrt(a2)
            bs = (hi - ki) ** 2
            c = (4.0 - hki) / 8.0
            d = (12.0 - hki) / 16.0
            asr = -0.5 * (bs / a2 + hki)
            acc = np.where(asr > -100.0,
                           a * np.exp(asr) * (1.0 - c * (bs - a2) * (1.0 - d * bs / 5.0) / 3.0
                                              + c * d * a2 * a2 / 5.0),
                           0.0)
            b = np.sqrt(bs)
            sp = np.sqrt(2.0 * np.pi) * ndtr(-b / a)
            tail = np.where(-hki < 100.0,
                            np.exp(-0.5 * hki) * sp * b
                            * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0),
                            0.0)
            acc = acc - tail
            half = 0.5 * a
            for x, w in zip(_GL_X, _GL_W):
                xs = (half + half * (2.0 * x - 1.0)) ** 2  # quadrature over (0, a) squared
                rs = np.sqrt(1.0 - xs)
                asr2 = -0.5 * (bs / xs + hki)
                live = asr2 > -100.0
                ep = np.exp(-hki * (1.0 - rs) / (2.0 * (1.0 + rs))) / rs
                term = np.exp(asr2) * (ep - (1.0 + c * xs * (1.0 + d * xs)))
                acc += np.where(live, half * 2.0 * w * term, 0.0)
            bvn[interior] = -acc / (2.0 * np.pi)

        pos = rr > 0
        bvn[pos] += ndtr(-np.maximum(hh[pos], kk[pos]))
        negm = ~pos
        if np.any(negm):
            corr = np.maximum(0.0, ndtr(kk[negm]) - ndtr(hh[negm]))
            bvn[negm] = corr - bvn[negm]
        out[hard] = bvn

    return np.clip(out, 0.0, 1.0)


def bvn_cdf(h, k, r) -> np.ndarray:
    """P(X <= h, Y <= k) for standard bivariate normals with correlation r.

    h, k, r broadcast together; r must lie in [-1, 1]. Infinite bounds are
    allowed and reduce to the marginals.
    """
    h, k, r = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float),
                                  np.asarray(r, dtype=float))
    if np.any(np.abs(r) > 1.0):
        raise InvalidCovarianceError("correlation outside [-1, 1]")
    scalar = h.ndim == 0
    # P(X <= h, Y <= k) = P(-X > -h, -Y > -k) with the same correlation
    hc = np.atleast_1d(np.clip(h, -38.0, 38.0))
    kc = np.atleast_1d(np.clip(k, -38.0, 38.0))
    out = _bvnu(-hc, -kc, np.atleast_1d(r))
    return float(out[0]) if scalar else out


def phi2(upper, cov) -> float:
    """P(V1 <= upper[0], V2 <= upper[1]) for centered normals with covariance cov.

    Degenerate covariances are honored exactly: a zero-variance component
    collapses to the indicator of its bound, and |correlation| = 1 reduces to
    the appropriate one-dimensional probability.
    """
    upper = np.asarray(upper, dtype=float).ravel()
    cov = np.asarray(cov, dtype=float)
    if upper.shape != (2,) or cov.shape != (2, 2):
        raise InvalidCovarianceError("phi2 expects a 2-vector bound and a 2x2 covariance")
    if not np.all(np.isfinite(cov)):
        raise InvalidCovarianceError("covariance has non-finite entries")
    if abs(cov[0, 1] - cov[1, 0]) > 1e-10 * (1.0 + abs(cov[0, 1])):
        raise InvalidCovarianceError("covariance is not symmetric")
    v1, v2 = cov[0, 0], cov[1, 1]
    if v1 < -1e-12 or v2 < -1e-12:
        raise InvalidCovarianceError("negative variance")
    v1, v2 = max(v1, 0.0), max(v2, 0.0)
    if v1 == 0.0 and v2 == 0.0:
        return float((upper[0] >= 0.0) and (upper[1] >= 0.0))
    if v1 == 0.0:
        return float(upper[0] >= 0.0) * float(ndtr(upper[1] / np.sqrt(v2)))
    if v2 == 0.0:
        return float(upper[1] >= 0.0) * float(ndtr(upper[0] / np.sqrt(v1)))
    s1, s2 = np.sqrt(v1), np.sqrt(v2)
    r = cov[0, 1] / (s1 * s2)
    if abs(r) > 1.0 + 1e-10:
        raise InvalidCovarianceError(f"implied correlation {r} outside [-1, 1]")
    r = float(np.clip(r, -1.0, 1.0))
    return float(bvn_cdf(upper[0] / s1, upper[1] / s2, r))
