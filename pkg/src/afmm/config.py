"""Strict JSON run configuration.

Top-level keys: ``seed``, ``population``, ``simulation``, ``sweep``,
``thresholds``.  Every section is optional and falls back to library
defaults; any unknown key anywhere is a ConfigError so that typos cannot
silently change an experiment.

Example::

    {
      "seed": 7,
      "population": {"n_agents": 100, "H": {"mean": 0.5, "half_width": 0.1}},
      "simulation": {"horizon": 2000, "burn_in": 200},
      "sweep": {"params": {"C": [0.1, 0.5, 0.9]}, "seeds_per_cell": 5,
                "propositions": {"seeds_per_cell": 20}},
      "thresholds": {"p1_supported": -0.8}
    }
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from afmm.errors import ConfigError
from afmm.experiments import SWEEPABLE, PropositionPlan, SweepSpec, Thresholds
from afmm.market import SimConfig
from afmm.population import PARAMS, ParamBox, PopulationConfig

TOP_KEYS = ("seed", "population", "simulation", "sweep", "thresholds")
SWEEP_KEYS = ("params", "seeds_per_cell", "base_seed", "workers", "propositions")


@dataclass
class RunConfig:
    seed: int = 0
    population: PopulationConfig = field(default_factory=PopulationConfig)
    simulation: SimConfig = field(default_factory=SimConfig)
    sweep_params: dict[str, list[float]] = field(default_factory=dict)
    seeds_per_cell: int = 20
    base_seed: int | None = None
    workers: int = 1
    plan: PropositionPlan = field(default_factory=PropositionPlan)
    thresholds: Thresholds = field(default_factory=Thresholds)
    digest: str = ""

    def sweep_spec(self) -> SweepSpec:
        base = self.seed if self.base_seed is None else self.base_seed
        return SweepSpec(self.simulation, self.population, dict(self.sweep_params),
                         self.seeds_per_cell, base, self.workers)

    def validate(self) -> None:
        self.population.validate()
        self.simulation.validate()


def _check_keys(section: str, data: Any, allowed) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{section} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(unknown)}")
    return data


def _coerce(section: str, name: str, value, default):
    # booleans are ints in Python; reject them for numeric fields
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(f"{section}.{name}: unsupported value {value!r}")
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{name} must be a string")
        return value
    if isinstance(value, str):
        raise ConfigError(f"{section}.{name} must be a number")
    if isinstance(default, int):
        if float(value) != int(value):
            raise ConfigError(f"{section}.{name} must be an integer")
        return int(value)
    return float(value)


def _fill(cls, section: str, data: dict, special=None):
    special = special or {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(section, data, fields)
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        if name in special:
            kwargs[name] = special[name](value)
        else:
            kwargs[name] = _coerce(section, name, value, getattr(defaults, name))
    return cls(**kwargs)


def _param_box(name: str):
    def parse(value):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return ParamBox(float(value), 0.0)
        data = _check_keys(f"population.{name}", value, ("mean", "half_width"))
        return ParamBox(float(data.get("mean", 0.5)), float(data.get("half_width", 0.0)))
    return parse


def _grid_list(section: str, values) -> tuple[float, ...]:
    if not isinstance(values, list) or not values:
        raise ConfigError(f"{section} must be a nonempty list of numbers")
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{section} must contain only numbers") from None


def parse_config(data: dict) -> RunConfig:
    _check_keys("config", data, TOP_KEYS)
    cfg = RunConfig()
    if "seed" in data:
        cfg.seed = _coerce("config", "seed", data["seed"], 0)

    pop = _fill(PopulationConfig, "population", data.get("population", {}),
                {p: _param_box(p) for p in PARAMS})
    sim = _fill(SimConfig, "simulation", data.get("simulation", {}))

    sweep = _check_keys("sweep", data.get("sweep", {}), SWEEP_KEYS)
    params = _check_keys("sweep.params", sweep.get("params", {}), SWEEPABLE)
    cfg.sweep_params = {k: list(_grid_list(f"sweep.params.{k}", v)) for k, v in params.items()}
    if "seeds_per_cell" in sweep:
        cfg.seeds_per_cell = _coerce("sweep", "seeds_per_cell", sweep["seeds_per_cell"], 0)
    if "base_seed" in sweep:
        cfg.base_seed = _coerce("sweep", "base_seed", sweep["base_seed"], 0)
    if "workers" in sweep:
        cfg.workers = _coerce("sweep", "workers", sweep["workers"], 0)
        if cfg.workers < 1:
            raise ConfigError("sweep.workers must be >= 1")
    seq_fields = {f.name for f in dataclasses.fields(PropositionPlan)
                  if not isinstance(getattr(PropositionPlan(), f.name), int)}
    cfg.plan = _fill(PropositionPlan, "sweep.propositions", sweep.get("propositions", {}),
                     {n: (lambda v, n=n: _grid_list(f"sweep.propositions.{n}", v)) for n in seq_fields})
    cfg.thresholds = _fill(Thresholds, "thresholds", data.get("thresholds", {}))

    cfg.population, cfg.simulation = pop, sim
    cfg.validate()
    return cfg


def load_config(path=None) -> RunConfig:
    """Parse a JSON config file; ``None`` gives the built-in defaults."""
    if path is None:
        cfg = parse_config({})
        cfg.digest = hashlib.sha256(b"{}").hexdigest()
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{p}: config file not found")
    raw = p.read_bytes()
    try:
        data = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    cfg = parse_config(data)
    # digest of the exact bytes, so it is identical on every platform
    cfg.digest = hashlib.sha256(raw).hexdigest()
    return cfg
