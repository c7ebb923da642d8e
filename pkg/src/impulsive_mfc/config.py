"""JSON scenario configuration.

A scenario is one JSON document::

    {
      "name": "shift1d", "n": 1, "T": 1.0, "M": 1.0,
      "f0": {"kind": "zero"},
      "controls": [{"kind": "constant", "params": {"value": [1.0]}}],
      "kernel": {"kind": "zero"},
      "cost": {"kind": "tanh"},
      "theta": {"kind": "dirac", "point": [0.0], "N": 50},
      "bounds": {"C": 1.0, "L": 1.0},
      "relax_a3": false,
      "seed": 0,
      "solver": {"grid_cells": 400, "tol_gap": null, "max_iter": 500, "tie_rule": "fill"},
      "control": {"breakpoints": [0.0, 1.0], "values": [[0.0]]}
    }

``theta`` kinds: ``points`` (explicit list), ``dirac`` (N copies of one point),
``gaussian`` (mean, std) and ``uniform`` (low, high), the last two sampled
with ``seed``.  ``control`` is the original-time piecewise-constant control
used by ``simulate``.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .fields import ConfigError, ProblemSpec, cost_from_descriptor, field_from_descriptor
from .measures import EmpiricalMeasure
from .optimizer import TIE_RULES, FWOptions
from .reduced_system import PiecewiseControl

THETA_KINDS = ("points", "dirac", "gaussian", "uniform")
SCENARIOS = ("shift1d", "opinion1d", "attraction_repulsion_2d")


@dataclass
class SolverConfig:
    grid_cells: int = 400
    tol_gap: float | None = None
    max_iter: int = 500
    tie_rule: str = "fill"
    substeps: int = 1
    workers: int = 1
    init: str = "uniform"

    def validate(self) -> None:
        if not isinstance(self.grid_cells, int) or self.grid_cells < 2:
            raise ConfigError(f"solver.grid_cells: expected an integer >= 2, got {self.grid_cells!r}")
        if self.tol_gap is not None and not self.tol_gap > 0:
            raise ConfigError(f"solver.tol_gap: expected a positive number or null, got {self.tol_gap!r}")
        if not isinstance(self.max_iter, int) or self.max_iter < 0:
            raise ConfigError(f"solver.max_iter: expected a nonnegative integer, got {self.max_iter!r}")
        if self.tie_rule not in TIE_RULES:
            raise ConfigError(f"solver.tie_rule: expected one of {TIE_RULES}, got {self.tie_rule!r}")
        if not isinstance(self.substeps, int) or self.substeps < 1:
            raise ConfigError(f"solver.substeps: expected a positive integer, got {self.substeps!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError(f"solver.workers: expected a positive integer, got {self.workers!r}")
        if self.init not in ("uniform", "control"):
            raise ConfigError(f"solver.init: expected 'uniform' or 'control', got {self.init!r}")

    def fw_options(self) -> FWOptions:
        return FWOptions(
            tol_gap=self.tol_gap,
            max_iter=self.max_iter,
            tie_rule=self.tie_rule,
            substeps=self.substeps,
            workers=self.workers,
        )


@dataclass
class ScenarioConfig:
    name: str
    n: int
    T: float
    M: float
    f0: dict
    controls: list
    kernel: dict
    cost: dict
    theta: dict
    bounds: dict = field(default_factory=lambda: {"C": 1.0, "L": 1.0})
    relax_a3: bool = False
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    control: dict | None = None

    @property
    def m(self) -> int:
        return len(self.controls)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: expected a JSON object")
        required = ("name", "n", "T", "M", "controls", "cost", "theta")
        missing = [k for k in required if k not in data]
        if missing:
            raise ConfigError(f"config: missing required field(s) {missing}")
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"config: unknown field(s) {unknown}")
        raw = copy.deepcopy(data)
        solver = raw.pop("solver", {}) or {}
        unknown = sorted(set(solver) - set(SolverConfig.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"solver: unknown field(s) {unknown}")
        raw.setdefault("f0", {"kind": "zero"})
        raw.setdefault("kernel", {"kind": "zero"})
        cfg = cls(**raw, solver=SolverConfig(**solver))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError(f"n: expected a positive integer, got {self.n!r}")
        for key in ("T", "M"):
            v = getattr(self, key)
            if not isinstance(v, (int, float)) or not v > 0:
                raise ConfigError(f"{key}: expected a positive number, got {v!r}")
        if not isinstance(self.controls, list) or not self.controls:
            raise ConfigError("controls: expected a nonempty list of field descriptors")
        if self.theta.get("kind") not in THETA_KINDS:
            raise ConfigError(f"theta.kind: expected one of {THETA_KINDS}, got {self.theta.get('kind')!r}")
        for key in ("C", "L"):
            if not self.bounds.get(key, 1.0) > 0:
                raise ConfigError(f"bounds.{key}: expected a positive number")
        self.solver.validate()

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def build_theta(desc: dict, n: int, seed: int) -> EmpiricalMeasure:
    kind = desc["kind"]
    try:
        if kind == "points":
            pts = np.asarray(desc["points"], dtype=float).reshape(-1, n)
            if "N" in desc and desc["N"] != pts.shape[0]:
                raise ConfigError(f"theta.N = {desc['N']} but {pts.shape[0]} points are listed")
            return EmpiricalMeasure(pts)
        N = int(desc["N"])
        if N < 1:
            raise ConfigError(f"theta.N: expected a positive integer, got {N}")
        rng = np.random.default_rng(seed)
        if kind == "dirac":
            return EmpiricalMeasure(np.tile(np.asarray(desc.get("point", np.zeros(n)), dtype=float), (N, 1)))
        if kind == "gaussian":
            mean = np.broadcast_to(np.asarray(desc.get("mean", 0.0), dtype=float), (n,))
            return EmpiricalMeasure(mean + float(desc.get("std", 1.0)) * rng.standard_normal((N, n)))
        low = np.broadcast_to(np.asarray(desc.get("low", -1.0), dtype=float), (n,))
        high = np.broadcast_to(np.asarray(desc.get("high", 1.0), dtype=float), (n,))
        return EmpiricalMeasure(rng.uniform(low, high, size=(N, n)))
    except KeyError as exc:
        raise ConfigError(f"theta: missing parameter {exc.args[0]!r} for kind {kind!r}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"theta: {exc}") from None


def build_spec(cfg: ScenarioConfig) -> ProblemSpec:
    n = cfg.n

    def named(label, fn, desc):
        try:
            return fn(desc, n)
        except ConfigError as exc:
            raise ConfigError(f"{label}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{label}: invalid parameters ({exc})") from None

    f0 = named("f0", field_from_descriptor, cfg.f0)
    controls = [named(f"controls[{i}]", field_from_descriptor, d) for i, d in enumerate(cfg.controls)]
    kernel = named("kernel", field_from_descriptor, cfg.kernel)
    cost = named("cost", cost_from_descriptor, cfg.cost)
    theta = build_theta(cfg.theta, n, cfg.seed)
    return ProblemSpec(
        f0, controls, kernel, cost, float(cfg.T), float(cfg.M), theta,
        C=float(cfg.bounds.get("C", 1.0)), L=float(cfg.bounds.get("L", 1.0)),
        relax_a3=bool(cfg.relax_a3), name=cfg.name,
    )


def build_control(cfg: ScenarioConfig) -> PiecewiseControl:
    """Original-time control for ``simulate``; defaults to u = 0 on [0, T]."""
    if cfg.control is None:
        return PiecewiseControl.constant(cfg.T, np.zeros(cfg.m))
    try:
        u = PiecewiseControl(
            np.asarray(cfg.control["breakpoints"], dtype=float),
            np.asarray(cfg.control["values"], dtype=float).reshape(-1, cfg.m),
        )
    except KeyError as exc:
        raise ConfigError(f"control: missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ConfigError(f"control: {exc}") from None
    if abs(u.T - cfg.T) > 1e-12 * cfg.T:
        raise ConfigError(f"control: breakpoints end at {u.T}, horizon is T = {cfg.T}")
    return u


def load_config(source: str | Path) -> ScenarioConfig:
    """Read a scenario from a path, a bundled scenario name, or a run manifest."""
    path = Path(source)
    if not path.exists() and str(source) in SCENARIOS:
        text = resources.files("impulsive_mfc.scenarios").joinpath(f"{source}.json").read_text()
    else:
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {source} is not valid JSON: {exc}") from None
    if isinstance(data, dict) and "config" in data and "config_hash" in data:
        data = data["config"]
    return ScenarioConfig.from_dict(data)
