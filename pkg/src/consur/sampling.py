"""Random field simulation and space-filling point sets.

Seeded, reproducible posterior field draws (Cholesky of the joint covariance),
maximin Latin hypercube designs and Sobol point sets for initial designs,
integration grids and optimizer pools.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import qmc

from .gp import GpPosterior, _chol_jittered


def seed_stream(master_seed: int, name: str) -> np.random.Generator:
    """Named child generator of a master seed.

    Streams for distinct names are independent and stable across processes
    (the name enters through a CRC, not the salted builtin hash).
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(key,)))


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class SimulationEnsemble:
    """Joint field draws at fixed points: values[r, j] = r-th draw at points[j]."""

    points: np.ndarray       # (m, d)
    values: np.ndarray       # (n_draws, m)
    seed: int | None
    posterior: str           # token of the source posterior

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.points.shape[0]:
            raise ValueError("values must have shape (n_draws, len(points))")

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    def save(self, prefix: str | Path) -> None:
        """Write <prefix>.values.npy, <prefix>.points.npy and a JSON header."""
        prefix = Path(prefix)
        np.save(prefix.with_suffix(".values.npy"), self.values)
        np.save(prefix.with_suffix(".points.npy"), self.points)
        header = {
            "shape": list(self.values.shape),
            "seed": self.seed,
            "posterior": self.posterior,
        }
        prefix.with_suffix(".json").write_text(json.dumps(header, indent=2))

    @classmethod
    def load(cls, prefix: str | Path) -> "SimulationEnsemble":
        prefix = Path(prefix)
        header = json.loads(prefix.with_suffix(".json").read_text())
        values = np.load(prefix.with_suffix(".values.npy"))
        points = np.load(prefix.with_suffix(".points.npy"))
        if list(values.shape) != header["shape"]:
            raise ValueError("ensemble header shape disagrees with stored matrix")
        return cls(points, values, header["seed"], header["posterior"])


def simulate(post: GpPosterior, points: np.ndarray, n_draws: int,
             seed=0, antithetic: bool = False) -> SimulationEnsemble:
    """Draw joint posterior field values at `points`.

    With antithetic=True, draws come in pairs mu +/- L g sharing the same
    normals g; n_draws must then be even. The Cholesky of the posterior
    covariance uses the same jitter ladder as conditioning.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if antithetic and n_draws % 2:
        raise ValueError("antithetic pairing needs an even n_draws")
    rng = _as_generator(seed)
    mu, cov = post.mean_and_cov(points)
    chol, _ = _chol_jittered(cov, post.kernel.variance)
    m = points.shape[0]
    if antithetic:
        g = rng.standard_normal((m, n_draws // 2))
        half = (chol @ g).T
        dev = np.vstack([half, -half])
    else:
        dev = (chol @ rng.standard_normal((m, n_draws))).T
    values = mu[None, :] + dev
    return SimulationEnsemble(points, values, seed if isinstance(seed, int) else None, post.token)


def lhs_plain(n: int, d: int, seed=0) -> np.ndarray:
    """One Latin hypercube sample on [0, 1]^d: per-dimension stratified, jittered."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    rng = _as_generator(seed)
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return u


def lhs_maximin(n: int, d: int, seed=0, candidates: int = 100) -> np.ndarray:
    """Best of `candidates` Latin hypercubes by the maximin distance score.

    The first candidate reproduces lhs_plain with the same seed, so the
    returned design's minimum pairwise distance is never below the plain one.
    """
    if candidates < 1:
        raise ValueError("candidates must be >= 1")
    rng = _as_generator(seed)
    best, best_score = None, -np.inf
    for _ in range(candidates):
        u = lhs_plain(n, d, rng)
        score = float(np.min(pdist(u))) if n > 1 else np.inf
        if score > best_score:
            best, best_score = u, score
    return best


def sobol_points(m: int, d: int, scramble_seed: int | None = None,
                 box: np.ndarray | None = None) -> np.ndarray:
    """First m Sobol points in d dimensions, optionally Owen-scrambled.

    The unscrambled sequence drops the initial origin point, so d=1 starts
    0.5, 0.75, 0.25, ... Scrambled sequences (seeded) are returned as-is.
    `box` (d, 2) maps the unit cube onto a product of intervals.
    """
    if m < 1 or d < 1:
        raise ValueError("m and d must be >= 1")
    import warnings

    with warnings.catch_warnings():
        # fractional powers of two are fine for grids; balance is a caller concern
        warnings.simplefilter("ignore", UserWarning)
        if scramble_seed is None:
            eng = qmc.Sobol(d, scramble=False)
            eng.fast_forward(1)
            u = eng.random(m)
        else:
            eng = qmc.Sobol(d, scramble=True, seed=scramble_seed)
            u = eng.random(m)
    if box is not None:
        box = np.asarray(box, dtype=float)
        if box.shape != (d, 2) or np.any(box[:, 1] <= box[:, 0]):
            raise ValueError("box must be (d, 2) with lo < hi")
        u = box[:, 0] + u * (box[:, 1] - box[:, 0])
    return u
