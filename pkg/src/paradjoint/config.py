"""Run configuration: JSON schema, validation, and construction helpers.

Config files are plain JSON. Field errors name the offending path
("problem.D: must be positive") and surface as :class:`ConfigError`, which
the CLI maps to exit code 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .problems import (
    ADVECTION_DIFFUSION,
    BURGERS,
    Grid2D,
    ProblemSpec,
    sin_product_field,
)

KNOWN_ALGORITHMS = ("linear", "nonlinear", "hybrid")
FIELD_SHAPES = ("sin_product", "ones", "zeros")


@dataclass(frozen=True)
class RunConfig:
    grid: Grid2D
    problem: ProblemSpec
    f_true: np.ndarray = field(repr=False)
    f_init: np.ndarray = field(repr=False)
    algorithm: str = "linear"
    workers: tuple[int, ...] = (1, 2, 4, 8, 16)
    checkpoints: int = 0
    rtol: float = 1e-3
    leja_tol: float | None = None
    eps: float = 1e-3
    repeats: int = 3
    seed: int = 0
    pilot_fraction: float = 0.05
    backend: str = "thread"
    output: str = "results"
    descent_steps: int = 0
    descent_lr: float = 0.5

    @property
    def effective_leja_tol(self) -> float:
        return self.rtol if self.leja_tol is None else self.leja_tol


def _get(data: dict, path: str, key: str, kind, required=True, default=None):
    where = f"{path}.{key}" if path else key
    if key not in data:
        if required:
            raise ConfigError(f"{where}: missing required field")
        return default
    value = data[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected {getattr(kind, '__name__', kind)}")
    return value


def _field_from(value, grid: Grid2D, nfields: int, where: str) -> np.ndarray:
    if isinstance(value, str):
        if value == "sin_product":
            return sin_product_field(grid, nfields)
        if value == "ones":
            return np.ones(nfields * grid.npoints)
        if value == "zeros":
            return np.zeros(nfields * grid.npoints)
        raise ConfigError(f"{where}: unknown field shape {value!r}; "
                          f"use one of {FIELD_SHAPES} or a flat list")
    if isinstance(value, list):
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != (nfields * grid.npoints,):
            raise ConfigError(
                f"{where}: expected {nfields * grid.npoints} values, got {arr.size}"
            )
        return arr
    raise ConfigError(f"{where}: expected a shape name or a flat list")


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    prob = _get(data, "", "problem", dict)
    kind = _get(prob, "problem", "kind", str)
    if kind not in (ADVECTION_DIFFUSION, BURGERS):
        raise ConfigError(
            f"problem.kind: expected '{ADVECTION_DIFFUSION}' or '{BURGERS}'"
        )
    nx = _get(prob, "problem", "nx", int, required=False, default=32)
    ny = _get(prob, "problem", "ny", int, required=False, default=32)
    try:
        grid = Grid2D(nx, ny)
    except ValueError as exc:
        raise ConfigError(f"problem.nx/ny: {exc}")
    a = _get(prob, "problem", "a", float, required=False, default=1.0)
    D = _get(prob, "problem", "D", float)
    omega = _get(prob, "problem", "omega", float, required=False, default=1.0)
    T = _get(prob, "problem", "T", float)
    if D <= 0:
        raise ConfigError("problem.D: must be positive")
    if T <= 0:
        raise ConfigError("problem.T: must be positive")
    nfields = 2 if kind == BURGERS else 1
    f_true = _field_from(prob.get("f_true", "sin_product"), grid, nfields,
                         "problem.f_true")
    f_init = _field_from(prob.get("f_init", "ones"), grid, nfields,
                         "problem.f_init")
    spec = ProblemSpec(kind, a, D, omega, T, f_true)

    algorithm = _get(data, "", "algorithm", str)
    if algorithm not in KNOWN_ALGORITHMS:
        raise ConfigError(f"algorithm: expected one of {KNOWN_ALGORITHMS}")
    if algorithm == "linear" and kind == BURGERS:
        raise ConfigError("algorithm: the linear algorithm needs a linear problem")

    workers = data.get("workers", [1, 2, 4, 8, 16])
    if isinstance(workers, int) and not isinstance(workers, bool):
        workers = [workers]
    if (
        not isinstance(workers, list)
        or not workers
        or not all(isinstance(w, int) and not isinstance(w, bool) and w >= 1
                   for w in workers)
    ):
        raise ConfigError("workers: expected a positive integer or list of them")

    checkpoints = _get(data, "", "checkpoints", int, required=False, default=0)
    if checkpoints < 0:
        raise ConfigError("checkpoints: cannot be negative")
    rtol = _get(data, "", "rtol", float, required=False, default=1e-3)
    if rtol <= 0:
        raise ConfigError("rtol: must be positive")
    leja_tol = _get(data, "", "leja_tol", float, required=False, default=None)
    if leja_tol is not None and leja_tol <= 0:
        raise ConfigError("leja_tol: must be positive")
    eps = _get(data, "", "eps", float, required=False, default=1e-3)
    if eps <= 0:
        raise ConfigError("eps: must be positive")
    repeats = _get(data, "", "repeats", int, required=False, default=3)
    if repeats < 1:
        raise ConfigError("repeats: must be at least 1")
    seed = _get(data, "", "seed", int, required=False, default=0)
    pilot = _get(data, "", "pilot_fraction", float, required=False, default=0.05)
    if not 0.0 < pilot <= 0.1:
        raise ConfigError("pilot_fraction: must lie in (0, 0.1]")
    backend = _get(data, "", "backend", str, required=False, default="thread")
    if backend not in ("thread", "process"):
        raise ConfigError("backend: expected 'thread' or 'process'")
    output = _get(data, "", "output", str, required=False, default="results")

    descent = data.get("descent", {})
    if not isinstance(descent, dict):
        raise ConfigError("descent: expected an object")
    steps = _get(descent, "descent", "steps", int, required=False, default=0)
    lr = _get(descent, "descent", "lr", float, required=False, default=0.5)
    if steps < 0:
        raise ConfigError("descent.steps: cannot be negative")
    if steps and lr <= 0:
        raise ConfigError("descent.lr: must be positive")

    return RunConfig(
        grid=grid, problem=spec, f_true=f_true, f_init=f_init,
        algorithm=algorithm, workers=tuple(workers), checkpoints=checkpoints,
        rtol=rtol, leja_tol=leja_tol, eps=eps, repeats=repeats, seed=seed,
        pilot_fraction=pilot, backend=backend, output=output,
        descent_steps=steps, descent_lr=lr,
    )


def load_config(path: str | Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return parse_config(data)


def save_field(path: str | Path, array: np.ndarray, grid: Grid2D,
               nfields: int) -> None:
    """Write a control field as flat float64 binary plus a JSON header."""
    path = Path(path)
    arr = np.asarray(array, dtype="<f8")
    arr.tofile(path.with_suffix(".bin"))
    header = {
        "shape": list(arr.shape),
        "dtype": "<f8",
        "grid": {"nx": grid.nx, "ny": grid.ny},
        "fields": nfields,
        "layout": "x varies fastest; fields stacked",
    }
    path.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")


def load_field(path: str | Path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    return np.fromfile(path.with_suffix(".bin"), dtype=header["dtype"])
