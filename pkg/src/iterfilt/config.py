"""Run configuration: JSON schema, loading, CLI overrides.

A single JSON file drives every CLI command.  Validation is strict:
unknown keys anywhere outside ``model_options`` (which each model
builder validates itself) are rejected with exit code 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

import jsonschema

from .core import IterfiltError
from .ifilter import MifSchedule, PracticalSchedule, TheoreticalSchedule

__all__ = ["ConfigError", "RunConfig", "load_config", "CONFIG_SCHEMA"]


class ConfigError(IterfiltError):
    """Invalid run configuration (schema violation or bad semantics)."""


_NUMBER = {"type": "number"}
_POSITIVE_INT = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "parameters"],
    "properties": {
        "model": {"type": "string", "minLength": 1},
        "parameters": {
            "type": "object",
            "minProperties": 1,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["value"],
                "properties": {
                    "value": _NUMBER,
                    "free": {"type": "boolean"},
                },
            },
        },
        "model_options": {"type": "object"},
        "time": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "t0": _NUMBER,
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "n_obs": _POSITIVE_INT,
            },
        },
        "kernel": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sigma_diag": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 1,
                },
                "truncation_radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["practical", "theoretical"]},
                "iterations": {"type": "integer", "minimum": 0},
                "particles": {"type": "integer", "minimum": 1},
                "sigma0": {"type": "number", "minimum": 0},
                "tau0": {"type": "number", "exclusiveMinimum": 0},
                "cooling": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "gain0": {"type": "number", "minimum": 0},
                "gain_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "tempering": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "tempering_factor": {"type": "number", "minimum": 1},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "base_particles": {"type": "integer", "minimum": 1},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "particles": _POSITIVE_INT,
        "replicates": _POSITIVE_INT,
        "resampler": {"enum": ["multinomial", "systematic"]},
        "output": {"type": "string", "minLength": 1},
    },
}

_SCHEDULE_DEFAULTS = {
    "mode": "practical",
    "iterations": 50,
    "particles": 1000,
    "sigma0": 0.05,
    "tau0": 0.5,
    "cooling": 0.95,
    "gain0": 0.1,
    "gain_decay": 0.95,
    "tempering": [],
    "tempering_factor": 1.0,
    "delta": 0.5,
    "base_particles": 100,
}

_THEORETICAL_KEYS = ("mode", "iterations", "delta", "base_particles")
_PRACTICAL_KEYS = (
    "mode",
    "iterations",
    "particles",
    "sigma0",
    "tau0",
    "cooling",
    "gain0",
    "gain_decay",
    "tempering",
    "tempering_factor",
)


@dataclass
class RunConfig:
    """A validated configuration with defaults and overrides applied."""

    model: str
    parameters: dict[str, dict[str, Any]]
    model_options: dict[str, Any]
    t0: float
    dt: float
    n_obs: int
    sigma_diag: list[float] | None
    truncation_radius: float
    schedule: dict[str, Any]
    seed: int
    particles: int
    replicates: int
    resampler: str
    output: str

    def resolved(self) -> dict[str, Any]:
        """The full effective configuration, embedded in every JSON output."""
        return {
            "model": self.model,
            "parameters": self.parameters,
            "model_options": self.model_options,
            "time": {"t0": self.t0, "dt": self.dt, "n_obs": self.n_obs},
            "kernel": {
                "sigma_diag": self.sigma_diag,
                "truncation_radius": self.truncation_radius,
            },
            "schedule": self.schedule,
            "seed": self.seed,
            "particles": self.particles,
            "replicates": self.replicates,
            "resampler": self.resampler,
            "output": self.output,
        }

    def build_schedule(self) -> MifSchedule:
        s = self.schedule
        if s["mode"] == "theoretical":
            return TheoreticalSchedule(
                n_iterations=s["iterations"],
                delta=s["delta"],
                base_particles=s["base_particles"],
            )
        return PracticalSchedule(
            n_iterations=s["iterations"],
            n_particles=s["particles"],
            sigma0=s["sigma0"],
            tau0=s["tau0"],
            cooling=s["cooling"],
            gain0=s["gain0"],
            gain_decay=s["gain_decay"],
            tempering_restarts=tuple(s["tempering"]),
            tempering_factor=s["tempering_factor"],
        )


def _validate(raw: dict) -> None:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {path}: {exc.message}") from exc


def parse_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _validate(raw)
    time_block = {"t0": 0.0, "dt": 1.0, "n_obs": 50, **raw.get("time", {})}
    kernel_block = {"sigma_diag": None, "truncation_radius": 6.0, **raw.get("kernel", {})}
    schedule = {**_SCHEDULE_DEFAULTS, **raw.get("schedule", {})}
    keep = _THEORETICAL_KEYS if schedule["mode"] == "theoretical" else _PRACTICAL_KEYS
    schedule = {k: schedule[k] for k in keep}
    parameters = {
        name: {"value": float(cfg["value"]), "free": bool(cfg.get("free", False))}
        for name, cfg in raw["parameters"].items()
    }
    if not any(cfg["free"] for cfg in parameters.values()):
        raise ConfigError("at least one parameter must be marked free")
    if time_block["t0"] >= time_block["t0"] + time_block["dt"]:
        raise ConfigError("time grid must advance (dt > 0)")
    return RunConfig(
        model=raw["model"],
        parameters=parameters,
        model_options=dict(raw.get("model_options", {})),
        t0=float(time_block["t0"]),
        dt=float(time_block["dt"]),
        n_obs=int(time_block["n_obs"]),
        sigma_diag=(
            None
            if kernel_block["sigma_diag"] is None
            else [float(v) for v in kernel_block["sigma_diag"]]
        ),
        truncation_radius=float(kernel_block["truncation_radius"]),
        schedule=schedule,
        seed=int(raw.get("seed", 0)),
        particles=int(raw.get("particles", 1000)),
        replicates=int(raw.get("replicates", 1)),
        resampler=raw.get("resampler", "systematic"),
        output=raw.get("output", "iterfilt-out"),
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)
