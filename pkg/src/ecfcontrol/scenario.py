"""Scenario configuration: schema, loading, and conversion to domain objects.

A scenario file is JSON (conventionally with a .cfg extension) describing
the system, cost, constraints, disturbance source, estimation parameters
and validation run. Matrix-valued fields accept either inline row arrays
or a string naming a CSV file resolved relative to the scenario file.
Loading reports syntax errors with line and column, and schema errors
with the offending field path.
"""

import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError
from pydantic import model_validator

from .dynamics import (LtiSystem, PolytopeConstraints,
                       build_time_varying_halfspaces)
from .ecf import DisturbanceSamples, build_trajectory_samples, load_samples_csv
from .errors import ConfigurationError
from .montecarlo import DisturbanceModel

Matrix = Union[float, list[list[float]], str]
Vector = Union[float, list[float], str]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Strict):
    A: Matrix
    B: Matrix
    G: Matrix
    horizon: int = Field(ge=1)
    dt: float = Field(default=1.0, gt=0)
    u_min: Vector
    u_max: Vector


class CostConfig(_Strict):
    """Per-step weights; scalars mean that multiple of the identity."""

    Q: Matrix
    R: Matrix


class BandConfig(_Strict):
    """Time-varying corridor on one state coordinate: bound = slope*t + icept."""

    coord: int = Field(ge=0)
    lower: Optional[tuple[float, float]] = None
    upper: Optional[tuple[float, float]] = None
    steps: Optional[list[int]] = None
    include_initial: bool = False

    @model_validator(mode="after")
    def _some_side(self):
        if self.lower is None and self.upper is None:
            raise ValueError("band needs a lower or an upper side")
        return self


class ExplicitRowsConfig(_Strict):
    P: Matrix
    q: Vector


class ConstraintsConfig(_Strict):
    bands: list[BandConfig] = []
    explicit: Optional[ExplicitRowsConfig] = None


class EcfConfig(_Strict):
    n_samples: int = Field(default=1000, ge=2)
    n_grid: int = Field(default=1000, ge=2)
    eps: float = Field(default=1e-3, gt=0)
    max_segments: int = Field(default=20, ge=1)
    quad_tol: float = Field(default=1e-7, gt=0)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    eps_d: float = Field(default=0.0, ge=0)
    margin: bool = False
    debias_smoothing: bool = True
    bandwidth_rule: Literal["plugin"] = "plugin"


class DisturbanceConfig(_Strict):
    """Exactly one source: a sampler family list, a per-step sample CSV,
    or a CSV of already-stacked horizon draws."""

    sampler: Optional[list[dict[str, Any]]] = None
    csv: Optional[str] = None
    trajectory_csv: Optional[str] = None
    seed: int = 0

    @model_validator(mode="after")
    def _one_source(self):
        given = [s for s in (self.sampler, self.csv, self.trajectory_csv)
                 if s is not None]
        if len(given) != 1:
            raise ValueError("give exactly one of sampler, csv, trajectory_csv")
        return self


class ValidationConfig(_Strict):
    n_rollouts: int = Field(default=1000, ge=1)
    seed: int = 1
    chunk_size: int = Field(default=4096, ge=1)


class ScenarioConfig(_Strict):
    name: str = "scenario"
    system: SystemConfig
    x0: list[float]
    x_d: Vector
    cost: CostConfig
    constraints: ConstraintsConfig = ConstraintsConfig()
    delta: float = Field(default=0.2, ge=0, le=1)
    ecf: EcfConfig = EcfConfig()
    disturbance: DisturbanceConfig
    validation: ValidationConfig = ValidationConfig()

    _base_dir: Path = PrivateAttr(default=Path("."))

    @property
    def base_dir(self):
        return self._base_dir

    def with_base_dir(self, base_dir):
        self._base_dir = Path(base_dir)
        return self


def load_scenario(path):
    """Parse and validate a scenario file, resolving paths against it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario file {path}: {exc}")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_scenario(raw, base_dir=path.parent)


def parse_scenario(raw, base_dir="."):
    """Validate an already-decoded scenario mapping."""
    try:
        config = ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        details = "; ".join(
            ".".join(str(p) for p in err["loc"]) + ": " + err["msg"]
            for err in exc.errors())
        raise ConfigurationError(f"invalid scenario: {details}") from exc
    return config.with_base_dir(base_dir)


def _resolve_matrix(value, base_dir, name):
    if isinstance(value, str):
        target = Path(base_dir) / value
        try:
            return np.loadtxt(target, delimiter=",", ndmin=2, dtype=float)
        except OSError as exc:
            raise ConfigurationError(f"{name}: cannot read {target}: {exc}")
    return value


def _resolve_vector(value, base_dir, name):
    if isinstance(value, str):
        arr = _resolve_matrix(value, base_dir, name)
        return arr.ravel()
    return value


def build_system(config):
    sysc = config.system
    base = config.base_dir
    return LtiSystem(_resolve_matrix(sysc.A, base, "system.A"),
                     _resolve_matrix(sysc.B, base, "system.B"),
                     _resolve_matrix(sysc.G, base, "system.G"),
                     horizon=sysc.horizon,
                     u_min=_resolve_vector(sysc.u_min, base, "system.u_min"),
                     u_max=_resolve_vector(sysc.u_max, base, "system.u_max"),
                     dt=sysc.dt)


def build_constraints(config, sys):
    parts = []
    for band in config.constraints.bands:
        parts.append(build_time_varying_halfspaces(
            sys, band.coord, lower=band.lower, upper=band.upper,
            steps=band.steps, include_initial=band.include_initial))
    if config.constraints.explicit is not None:
        exp = config.constraints.explicit
        P = np.atleast_2d(np.asarray(
            _resolve_matrix(exp.P, config.base_dir, "constraints.explicit.P"),
            dtype=float))
        q = np.atleast_1d(np.asarray(
            _resolve_vector(exp.q, config.base_dir, "constraints.explicit.q"),
            dtype=float))
        width = sys.n_states * (sys.horizon + 1)
        if P.shape[1] != width:
            raise ConfigurationError(
                f"constraints.explicit.P must have {width} columns, got "
                f"{P.shape[1]}")
        parts.append(PolytopeConstraints(P, q))
    if not parts:
        width = sys.n_states * (sys.horizon + 1)
        return PolytopeConstraints(np.zeros((0, width)), np.zeros(0))
    if len(parts) == 1:
        return parts[0]
    return PolytopeConstraints.stack(parts)


def build_target(config, sys):
    """Stacked reference: a length-n target is held constant over the horizon."""
    x_d = np.atleast_1d(np.asarray(
        _resolve_vector(config.x_d, config.base_dir, "x_d"), dtype=float))
    n, N = sys.n_states, sys.horizon
    if x_d.shape == (n,):
        return np.tile(x_d, N + 1)
    if x_d.shape == (n * (N + 1),):
        return x_d
    raise ConfigurationError(
        f"x_d must have length {n} or {n * (N + 1)}, got {x_d.shape[0]}")


def stacked_weights(config, sys):
    """Per-step cost weights lifted to the stacked trajectory and input."""
    base = config.base_dir

    def lift(value, size, copies, name):
        value = _resolve_matrix(value, base, name)
        if np.isscalar(value):
            return float(value)
        W = np.atleast_2d(np.asarray(value, dtype=float))
        if W.shape != (size, size):
            raise ConfigurationError(
                f"{name} must be scalar or {size}x{size}, got {W.shape}")
        return np.kron(np.eye(copies), W)

    Q = lift(config.cost.Q, sys.n_states, sys.horizon + 1, "cost.Q")
    R = lift(config.cost.R, sys.n_inputs, sys.horizon, "cost.R")
    return Q, R


def per_step_weights(config, sys):
    """Cost weights at single-step size, for rollout cost evaluation."""
    base = config.base_dir

    def one(value, size, name):
        value = _resolve_matrix(value, base, name)
        if np.isscalar(value):
            return float(value)
        W = np.atleast_2d(np.asarray(value, dtype=float))
        if W.shape != (size, size):
            raise ConfigurationError(
                f"{name} must be scalar or {size}x{size}, got {W.shape}")
        return W

    return (one(config.cost.Q, sys.n_states, "cost.Q"),
            one(config.cost.R, sys.n_inputs, "cost.R"))


def build_disturbance_model(config):
    """Sampler-backed model, or an empirical bootstrap over CSV pool rows."""
    dist = config.disturbance
    if dist.sampler is not None:
        return DisturbanceModel(dist.sampler)
    pool = load_pool(config)
    return DisturbanceModel([
        {"family": "empirical", "values": pool[:, d].tolist()}
        for d in range(pool.shape[1])
    ])


def load_pool(config):
    """The per-step sample pool as an (N_s, p) array."""
    dist = config.disturbance
    if dist.csv is not None:
        pool = load_samples_csv(Path(config.base_dir) / dist.csv)
    elif dist.trajectory_csv is not None:
        raise ConfigurationError(
            "trajectory_csv carries stacked draws; use build_samples")
    else:
        model = DisturbanceModel(dist.sampler)
        rng = np.random.default_rng(dist.seed)
        pool = model.sample(rng, config.ecf.n_samples)
    if pool.shape[0] < 2:
        raise ConfigurationError("need at least 2 disturbance samples")
    return pool


def build_samples(config, sys):
    """Stacked-horizon disturbance samples from the configured source."""
    dist = config.disturbance
    if dist.trajectory_csv is not None:
        raw = load_samples_csv(Path(config.base_dir) / dist.trajectory_csv)
        expected = sys.n_dist * sys.horizon
        if raw.shape[1] != expected:
            raise ConfigurationError(
                f"trajectory_csv must have {expected} columns, got "
                f"{raw.shape[1]}")
        return DisturbanceSamples.from_trajectory(raw, sys.n_dist)
    pool = load_pool(config)
    if pool.shape[1] != sys.n_dist:
        raise ConfigurationError(
            f"disturbance pool has {pool.shape[1]} coordinates, system "
            f"expects {sys.n_dist}")
    return build_trajectory_samples(pool, sys.horizon, seed=dist.seed)
