"""Experiment configuration: TOML files plus ``key.path=value`` overrides.

Schema (every section optional; defaults shown)::

    seed = 42
    output = "result.csv"          # --out wins over this

    [accuracy]                     # kind = simple | full | powerlaw
    kind = "full"
    a_opt = 0.95
    k = 1.0

    [population]                   # see population_from_config
    cost = 0.1
    n = 10000

    [mechanism]                    # kind = standard | shaping | shaping2t | plugin
    kind = "shaping"
    epsilon = 1e-6

    [sweep]
    parameter = "c"                # c | n | k
    start = 1e-4
    stop = 1.0
    scale = "log"                  # log | linear
    points = 41
    k_values = [1.0, 10.0, 100.0]  # extra k axis for the cost sweeps

    [two_type]
    c_low = 0.005
    c_high = 0.01
    p = 0.5
    n = 4
    draws = 200

    [verify]
    scale = 1.0                    # multiplies the number of random draws
    max_agents = 5                 # configured population is cut to this size

A plugin mechanism names a factory ``target = "module:attr"`` (optionally
importable from ``path``) called with the ``params`` table.
"""

from __future__ import annotations

import copy
import importlib
import math
import sys
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .accuracy import AccuracyModel, model_from_config
from .agents import Population, population_from_config
from .errors import ParameterError
from .mechanisms import Mechanism, mechanism_from_config

__all__ = ["DEFAULTS", "SweepSpec", "ExperimentConfig", "load_config", "apply_override"]

DEFAULTS = {
    "seed": 42,
    "accuracy": {"kind": "full", "a_opt": 0.95, "k": 1.0},
    "population": {"cost": 0.1, "n": 10_000},
    "mechanism": {"kind": "shaping", "epsilon": 1e-6},
}

_SWEEP_PARAMS = ("c", "n", "k")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    start: float
    stop: float
    scale: str = "log"
    points: int = 10
    k_values: tuple = ()

    def __post_init__(self):
        if self.parameter not in _SWEEP_PARAMS:
            raise ParameterError(f"sweep.parameter must be one of {_SWEEP_PARAMS}, got {self.parameter!r}")
        if self.scale not in ("log", "linear"):
            raise ParameterError(f"sweep.scale must be 'log' or 'linear', got {self.scale!r}")
        if self.points < 1:
            raise ParameterError(f"sweep.points must be >= 1, got {self.points}")
        if not (math.isfinite(self.start) and math.isfinite(self.stop)) or self.start > self.stop:
            raise ParameterError(f"sweep range is empty: [{self.start}, {self.stop}]")
        if self.scale == "log" and self.start <= 0:
            raise ParameterError("a log sweep needs a positive start")

    def values(self) -> np.ndarray:
        if self.scale == "log":
            xs = np.geomspace(self.start, self.stop, self.points)
        else:
            xs = np.linspace(self.start, self.stop, self.points)
        if self.parameter == "n":
            xs = np.unique(np.maximum(np.rint(xs), 1).astype(int))
        return xs

    @classmethod
    def from_config(cls, section: Mapping, default: Mapping | None = None) -> "SweepSpec":
        merged = dict(default or {})
        merged.update(section or {})
        try:
            return cls(
                parameter=str(merged["parameter"]),
                start=float(merged["start"]),
                stop=float(merged["stop"]),
                scale=str(merged.get("scale", "log")),
                points=int(merged.get("points", 10)),
                k_values=tuple(float(k) for k in merged.get("k_values", ())),
            )
        except KeyError as exc:
            raise ParameterError(f"sweep section is missing {exc.args[0]!r}") from exc
        except (TypeError, ValueError) as exc:
            raise ParameterError(f"bad sweep section: {exc}") from exc


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, override: str) -> dict:
    """Set ``a.b.c=value``; the value is read as a TOML literal, else a string."""
    if "=" not in override:
        raise ParameterError(f"override must look like key=value, got {override!r}")
    path, text = override.split("=", 1)
    keys = [k.strip() for k in path.strip().split(".")]
    if not all(keys):
        raise ParameterError(f"bad override key {path!r}")
    out = copy.deepcopy(data)
    node = out
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ParameterError(f"override {path!r} descends into non-table {key!r}")
        node = child
    node[keys[-1]] = _parse_value(text.strip())
    return out


def _load_plugin(section: Mapping) -> Mechanism:
    target = section.get("target")
    if not target or ":" not in str(target):
        raise ParameterError("plugin mechanism needs target = 'module:attr'")
    extra_path = section.get("path")
    if extra_path and str(extra_path) not in sys.path:
        sys.path.insert(0, str(extra_path))
    module_name, attr = str(target).split(":", 1)
    try:
        factory = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise ParameterError(f"cannot load plugin {target!r}: {exc}") from exc
    mech = factory(**dict(section.get("params", {})))
    if not isinstance(mech, Mechanism):
        raise ParameterError(f"plugin {target!r} did not return a Mechanism")
    return mech


@dataclass
class ExperimentConfig:
    data: dict

    @property
    def seed(self) -> int:
        return int(self.data.get("seed", 42))

    @property
    def output(self) -> str | None:
        out = self.data.get("output")
        return None if out is None else str(out)

    def section(self, name: str) -> dict:
        value = self.data.get(name, {})
        if not isinstance(value, Mapping):
            raise ParameterError(f"config entry {name!r} must be a table")
        return dict(value)

    def model(self, **changes) -> AccuracyModel:
        return model_from_config(_merge(self.section("accuracy"), changes))

    def mechanism(self) -> Mechanism:
        section = self.section("mechanism")
        if str(section.get("kind", "")).lower() == "plugin":
            return _load_plugin(section)
        return mechanism_from_config(section)

    def population(self) -> Population:
        return population_from_config(self.section("population"), self.seed)

    def sweep(self, default: Mapping) -> SweepSpec:
        return SweepSpec.from_config(self.section("sweep"), default)

    def validate(self) -> None:
        """Build every configured object once so bad values fail early."""
        self.model()
        self.mechanism()
        if "sweep" in self.data:
            sweep = self.section("sweep")
            if {"parameter", "start", "stop"} <= sweep.keys():
                SweepSpec.from_config(sweep)


def load_config(path: str | None, overrides: Sequence[str] = (), seed: int | None = None) -> ExperimentConfig:
    """Defaults, then the file, then overrides, then an explicit seed."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = _merge(data, tomllib.load(fh))
        except OSError as exc:
            raise ParameterError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"config {path} is not valid TOML: {exc}") from exc
    for item in overrides:
        data = apply_override(data, item)
    if seed is not None:
        data["seed"] = int(seed)
    cfg = ExperimentConfig(data)
    cfg.validate()
    return cfg
