"""
Experiment configuration.

INI files are read permissively with configparser: unknown sections and keys
are logged and skipped. Values resolve as built-in defaults, then per-experiment
defaults, then the config file, then command-line overrides.
"""

from __future__ import annotations

import configparser
import logging
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENTS = ("quadrature", "loschmidt", "qfi", "finite_eta", "noise", "validate")
MODELS = ("qrm_effective", "opo", "lmg")
FORMATS = ("csv", "json")
STATES = ("canonical", "vacuum")
# half-decade steps so the optimum fit has at least four points
ETA_DECADES = tuple(10.0 ** e for e in (2.0, 2.5, 3.0, 3.5, 4.0))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    out: list[int] = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (field, parser)
SCHEMA: dict[str, dict[str, tuple[str, Callable[[str], Any]]]] = {
    "run": {"experiment": ("experiment", str), "workers": ("workers", int), "slow": ("slow", _bool)},
    "model": {
        "name": ("model", str),
        "omega": ("omega", float),
        "eta": ("eta", float),
        "gamma": ("gamma", float),
        "kappa": ("kappa", float),
        "lambda": ("lam", float),
    },
    "grid": {
        "min": ("grid_min", float),
        "max": ("grid_max", float),
        "steps": ("grid_steps", int),
        "values": ("grid_values", _floats),
        "times": ("times", _floats),
        "branches": ("branches", _ints),
    },
    "protocol": {
        "n": ("n", int),
        "phase_cycles": ("phase_cycles", float),
        "state": ("state", str),
        "fwhm": ("fwhm", _bool),
        "frequency": ("frequency", _bool),
    },
    "noise": {
        "dephasing": ("dephasing", _floats),
        "qubit_decay": ("qubit_decay", float),
        "boson_decay": ("boson_decay", float),
        "boson_heating": ("boson_heating", float),
    },
    "cutoff": {"initial": ("cutoff_initial", int), "max": ("cutoff_max", int)},
    "finite_eta": {"etas": ("etas", _floats)},
    "output": {"path": ("output", str), "format": ("format", str)},
}

EXPERIMENT_DEFAULTS: dict[str, dict[str, Any]] = {
    "quadrature": {"grid_min": 0.7, "grid_max": 0.95, "grid_steps": 8},
    "loschmidt": {"branches": tuple(range(1, 7))},
    "qfi": {"grid_min": 0.9, "grid_max": 0.99, "grid_steps": 4, "state": "vacuum"},
    "finite_eta": {"grid_min": 0.5, "grid_max": 0.95, "grid_steps": 10, "etas": ETA_DECADES},
    # Δ_g from 3.64 down to 1.75, clear of the finite-η bound 10η^(−1/3) = 1
    "noise": {
        "grid_min": 0.3,
        "grid_max": 0.75,
        "grid_steps": 6,
        "eta": 1000.0,
        "dephasing": (0.0, 0.05, 0.1),
    },
    "validate": {},
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "quadrature"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    slow: bool = False
    model: str = "qrm_effective"
    omega: float = 1.0
    eta: float = 1000.0
    gamma: float = 0.0
    kappa: float = 0.25
    lam: float = 1.3
    grid_min: float = 0.7
    grid_max: float = 0.95
    grid_steps: int = 8
    grid_values: tuple[float, ...] = ()
    times: tuple[float, ...] = ()
    branches: tuple[int, ...] = tuple(range(1, 7))
    n: int = 1
    phase_cycles: float = 1.0
    state: str = "canonical"
    fwhm: bool = False
    frequency: bool = False
    dephasing: tuple[float, ...] = (0.0,)
    qubit_decay: float | None = None
    boson_decay: float | None = None
    boson_heating: float | None = None
    cutoff_initial: int = 32
    cutoff_max: int = 1024
    etas: tuple[float, ...] = ETA_DECADES
    output: str = ""
    format: str = "csv"

    def __post_init__(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}; choose from {', '.join(FORMATS)}")
        if self.state not in STATES:
            raise ConfigError(f"unknown state {self.state!r}; choose from {', '.join(STATES)}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if not self.grid_values:
            if self.grid_steps < 2:
                raise ConfigError(f"grid steps must be >= 2, got {self.grid_steps}")
            if not self.grid_min < self.grid_max:
                raise ConfigError(f"grid min must be < max, got {self.grid_min} >= {self.grid_max}")
        if any(not (math.isfinite(t) and t >= 0.0) for t in self.times):
            raise ConfigError(f"times must be finite values >= 0, got {self.times}")
        if not self.branches or min(self.branches) < 1:
            raise ConfigError(f"branches must be a non-empty list of integers >= 1, got {self.branches}")
        if not self.dephasing or min(self.dephasing) < 0.0:
            raise ConfigError(f"dephasing rates must be a non-empty list of values >= 0, got {self.dephasing}")
        if not self.etas or min(self.etas) < 1.0:
            raise ConfigError(f"etas must be a non-empty list of values >= 1, got {self.etas}")
        if not 2 <= self.cutoff_initial <= self.cutoff_max:
            raise ConfigError(f"cutoff bounds must satisfy 2 <= initial <= max, got {self.cutoff_initial}, {self.cutoff_max}")
        for name in ("omega", "eta", "gamma", "kappa", "lam", "phase_cycles"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    def grid(self) -> tuple[float, ...]:
        if self.grid_values:
            return tuple(self.grid_values)
        return tuple(float(v) for v in np.linspace(self.grid_min, self.grid_max, self.grid_steps))

    @property
    def output_path(self) -> str:
        if self.output:
            return self.output
        return str(Path("results") / f"{self.experiment}.{self.format}")

    def as_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def read_config(path: str | Path) -> dict[str, Any]:
    """Parse an INI file into field overrides; unknown entries warn and are skipped."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    values: dict[str, Any] = {}
    for section in parser.sections():
        schema = SCHEMA.get(section)
        if schema is None:
            logger.warning("%s: unknown section [%s] ignored", path, section)
            continue
        for key, raw in parser.items(section):
            entry = schema.get(key)
            if entry is None:
                logger.warning("%s: unknown key %s.%s ignored", path, section, key)
                continue
            name, convert = entry
            try:
                values[name] = convert(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}={raw!r}: {exc}") from exc
    return values


def build_config(
    experiment: str,
    file_values: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    merged: dict[str, Any] = {"experiment": experiment}
    if experiment not in EXPERIMENT_DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    merged.update(EXPERIMENT_DEFAULTS[experiment])
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    merged["experiment"] = experiment
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
