"""Experiment configuration files.

One YAML mapping per experiment; every section converts to the corresponding
dataclass with explicit validation, so CLI users get a config error (exit 2)
rather than a traceback deep inside numpy.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import yaml

from .benchmark import BenchmarkConfig
from .conservative import SearchConfig
from .excursion import ExcursionProblem, IntegrationGrid
from .gp import Design
from .kernels import KernelSpec
from .optimize import OptimizerConfig
from .strategy import StrategyConfig


class ConfigError(Exception):
    """Configuration file missing, malformed, or inconsistent."""


def load_config(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {p}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{p} must contain a mapping at top level")
    return data


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"missing key {key!r} in {where}")
    return cfg[key]


def _wrap(fn, where: str):
    try:
        return fn()
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid {where}: {e}") from None


def kernel_from_config(cfg: dict, dim: int | None = None) -> KernelSpec:
    family = cfg.get("family", "matern32")
    ls = _require(cfg, "lengthscales", "kernel section")
    ls = np.atleast_1d(np.asarray(ls, dtype=float))
    if ls.size == 1 and dim is not None:
        ls = np.full(dim, ls[0])
    variance = float(cfg.get("variance", 1.0))
    return _wrap(lambda: KernelSpec(family, ls, variance), "kernel section")


def grid_from_config(cfg: dict, box: np.ndarray) -> IntegrationGrid:
    kind = cfg.get("type", "sobol")
    if kind == "sobol":
        m = int(cfg.get("m", 2000 * box.shape[0]))
        return _wrap(lambda: IntegrationGrid.sobol(box, m, cfg.get("scramble_seed")),
                     "grid section")
    if kind == "uniform":
        m = int(cfg.get("m", 2000 * box.shape[0]))
        return _wrap(lambda: IntegrationGrid.uniform_random(box, m, int(cfg.get("seed", 0))),
                     "grid section")
    if kind == "grid":
        per_dim = _require(cfg, "per_dim", "grid section")
        return _wrap(lambda: IntegrationGrid.full_grid(box, per_dim), "grid section")
    raise ConfigError(f"unknown grid type {kind!r}")


def problem_from_config(cfg: dict) -> ExcursionProblem:
    box = np.asarray(_require(cfg, "box", "problem section"), dtype=float)
    grid = grid_from_config(cfg.get("grid", {}), np.atleast_2d(box))
    return _wrap(lambda: ExcursionProblem(
        float(_require(cfg, "threshold", "problem section")),
        cfg.get("orientation", "above"),
        float(cfg.get("alpha", 0.95)),
        box, grid), "problem section")


def search_from_config(cfg: dict) -> SearchConfig:
    known = {"rho_min", "rho_max", "tol", "ell_max", "n_samples", "seed"}
    bad = set(cfg) - known
    if bad:
        raise ConfigError(f"unknown search keys {sorted(bad)}")
    return _wrap(lambda: SearchConfig(**cfg), "search section")


def optimizer_from_config(cfg: dict) -> OptimizerConfig:
    known = {"starts", "local_iters", "pool_size", "mode", "seed", "xatol_rel", "fatol"}
    bad = set(cfg) - known
    if bad:
        raise ConfigError(f"unknown optimizer keys {sorted(bad)}")
    return _wrap(lambda: OptimizerConfig(**cfg), "optimizer section")


def strategy_from_config(cfg: dict) -> StrategyConfig:
    cfg = dict(cfg)
    opt = optimizer_from_config(cfg.pop("optimizer", {}))
    search = search_from_config(cfg.pop("search", {}))
    kind = _require(cfg, "kind", "strategy section")
    cfg.pop("kind")
    known = {"alpha", "q", "iterations", "seed", "reestimate", "reestimate_every",
             "mle_bounds", "mle_family", "estimate_noise"}
    bad = set(cfg) - known
    if bad:
        raise ConfigError(f"unknown strategy keys {sorted(bad)}")
    if "mle_bounds" in cfg and cfg["mle_bounds"] is not None:
        cfg["mle_bounds"] = {k: tuple(v) for k, v in cfg["mle_bounds"].items()}
    return _wrap(lambda: StrategyConfig(kind=kind, optimizer=opt, search=search, **cfg),
                 "strategy section")


def benchmark_from_config(cfg: dict) -> BenchmarkConfig:
    cfg = dict(cfg)
    opt = cfg.pop("optimizer", None)
    search = cfg.pop("search", None)
    if "strategies" in cfg:
        cfg["strategies"] = tuple(cfg["strategies"])
    known = {"dim", "kernel_family", "lengthscale", "variance", "mean_value",
             "noise_variance", "threshold", "orientation", "alpha", "n_init",
             "m_doe", "replications", "iterations", "q", "grid_m", "path_per_dim",
             "path_sobol_m", "strategies", "seed"}
    bad = set(cfg) - known
    if bad:
        raise ConfigError(f"unknown benchmark keys {sorted(bad)}")
    kwargs = dict(cfg)
    if opt is not None:
        kwargs["optimizer"] = optimizer_from_config(opt)
    if search is not None:
        kwargs["search"] = search_from_config(search)
    return _wrap(lambda: BenchmarkConfig(**kwargs), "benchmark section")


def objective_from_config(cfg: dict) -> tuple:
    """Build an objective callable; returns (objective, problem defaults).

    Three kinds: a named builtin test function, a GP sample path drawn on a
    fine grid ("gp-path"), or a tabulated surrogate interpolating a CSV of
    observations under a stated kernel ("table"). The defaults dict carries
    box/threshold/orientation when the objective implies them.
    """
    from .benchmark import draw_path_objectives
    from .gp import fit_posterior
    from .objectives import OBJECTIVES
    from .sampling import sobol_points

    kind = cfg.get("type", "builtin")
    if kind == "builtin":
        name = _require(cfg, "name", "objective section")
        if name not in OBJECTIVES:
            raise ConfigError(f"unknown objective {name!r}; have {sorted(OBJECTIVES)}")
        func, box, threshold, orientation = OBJECTIVES[name]
        return func, {"box": np.asarray(box, dtype=float).tolist(),
                      "threshold": threshold, "orientation": orientation}
    if kind == "gp-path":
        box = np.atleast_2d(np.asarray(_require(cfg, "box", "objective section"), dtype=float))
        d = box.shape[0]
        kernel = kernel_from_config(_require(cfg, "kernel", "objective section"), d)
        if d <= 2:
            per_dim = int(cfg.get("per_dim", 100))
            pts = IntegrationGrid.full_grid(box, per_dim).points
        else:
            pts = sobol_points(int(cfg.get("sobol_m", 2 ** 14)), d, None, box)
        obj = _wrap(lambda: draw_path_objectives(
            kernel, float(cfg.get("mean_value", 0.0)), pts, 1, int(cfg.get("seed", 0)))[0],
            "objective section")
        return obj, {"box": box.tolist()}
    if kind == "table":
        pts, vals = read_design_csv(_require(cfg, "path", "objective section"))
        kernel = kernel_from_config(_require(cfg, "kernel", "objective section"), pts.shape[1])
        post = _wrap(lambda: fit_posterior(
            kernel, Design(pts, vals, float(cfg.get("noise_variance", 0.0))),
            float(cfg.get("mean_value", 0.0))), "objective section")
        return post.mean, {}
    raise ConfigError(f"unknown objective type {kind!r}")


def read_design_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Design file with header x1,...,xd,y; returns (points, values)."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"design file not found: {p}")
    data = np.genfromtxt(p, delimiter=",", names=True)
    if data.dtype.names is None:
        raise ConfigError(f"{p} needs a header row x1,...,xd,y")
    names = list(data.dtype.names)
    if "y" not in names:
        raise ConfigError(f"{p} has no 'y' column")
    xcols = [n for n in names if n != "y"]
    expected = [f"x{i + 1}" for i in range(len(xcols))]
    if xcols != expected:
        raise ConfigError(f"{p} input columns must be {expected}, found {xcols}")
    data = np.atleast_1d(data)
    pts = np.column_stack([data[c] for c in xcols])
    return pts, np.asarray(data["y"], dtype=float)


def write_design_csv(path: str | Path, points: np.ndarray, values: np.ndarray) -> None:
    points = np.atleast_2d(points)
    header = ",".join([f"x{i + 1}" for i in range(points.shape[1])] + ["y"])
    body = np.column_stack([points, np.asarray(values).reshape(-1, 1)])
    np.savetxt(path, body, delimiter=",", header=header, comments="")


def save_model(path: str | Path, kernel: KernelSpec, design: Design,
               mean_value: float, extra: dict | None = None) -> None:
    payload = {
        "family": kernel.family,
        "lengthscales": kernel.lengthscales.tolist(),
        "variance": kernel.variance,
        "noise_variance": design.noise_variance,
        "mean_value": float(mean_value),
        "points": design.points.tolist(),
        "values": design.values.tolist(),
    }
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=1))


def load_model(path: str | Path) -> tuple[KernelSpec, Design, float]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model file not found: {p}")
    try:
        d = json.loads(p.read_text())
        kernel = KernelSpec(d["family"], np.asarray(d["lengthscales"], dtype=float),
                            float(d["variance"]))
        design = Design(np.asarray(d["points"], dtype=float),
                        np.asarray(d["values"], dtype=float),
                        float(d.get("noise_variance", 0.0)))
        return kernel, design, float(d.get("mean_value", 0.0))
    except (KeyError, ValueError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot load model {p}: {e}") from None
