"""JSON run configuration: parsing, defaults and field-level validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .experiments import DEFAULT_SCHEDULE, EXPERIMENTS, ExperimentConfig
from .params import ConfigurationError, InitialLawSpec, ModelParams

SCHEMA_VERSION = 1

# slope bands [lo, hi] per estimate label and p; None leaves a side open
DEFAULT_BANDS: dict[str, dict[str, list]] = {
    "q1": {"1": [None, -0.5], "2": [None, -0.5]},
    "q2": {"1": [-0.57, -0.43], "2": [None, -0.5]},
    "q3": {"1": [-0.55, -0.35], "2": [None, -0.5]},
    "iid_d1": {"1": [-0.57, -0.43], "2": [None, -0.5]},
    "iid_d2": {"1": [-0.55, -0.35], "2": [None, -0.5]},
    "common_noise": {"1": [-0.57, -0.43], "2": [None, -0.5]},
    "common_noise_uniform": {"1": [-0.55, -0.35], "2": [None, -0.5]},
}

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "model": {"k": 1.0, "T": 1.0, "N": None, "initial_law": {"kind": "gaussian", "mean": 0.0, "var": 1.0}},
    "riccati": {"steps": 4096, "N": None},
    "rates": {
        "N_schedule": list(DEFAULT_SCHEDULE),
        "replications": 200,
        "checkpoints": None,
        "p_list": [1.0, 2.0],
        "method": "exact",
        "sup_nodes": 64,
        "include_initial": False,
        "kernel_steps": 4096,
        "euler_steps": 256,
        "reference_factor": 100,
        "reference_floor": 200,
        "q1_mode": "closed_form",
        "iid_dim": 1,
        "sigma": 0.5,
        "sigma_grid": 17,
        "bootstrap": 2000,
        "bands": DEFAULT_BANDS,
    },
    "nash": {
        "N": 2,
        "epsilons": [-0.2, -0.1, 0.0, 0.1, 0.2],
        "replications": 20000,
        "min_replications": 100,
        "steps": 1000,
    },
}


@dataclass
class RunConfig:
    raw: dict[str, Any]
    seed: int
    params: ModelParams

    def section(self, name: str) -> dict[str, Any]:
        return self.raw[name]

    def experiment_config(self, workers: int = 1) -> ExperimentConfig:
        r = dict(self.raw["rates"])
        r.pop("bands")
        try:
            return ExperimentConfig(params=self.params, seed=self.seed, workers=workers, **r)
        except ConfigurationError as exc:
            raise ConfigurationError(f"rates.{exc.field}", str(exc).split(": ", 1)[-1]) from None

    def bands(self) -> dict[str, dict[str, list]]:
        return self.raw["rates"]["bands"]


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigurationError(path, "unknown field")
        if isinstance(base[key], dict) and key != "initial_law":
            if not isinstance(value, dict):
                raise ConfigurationError(path, "must be an object")
            out[key] = _merge(base[key], value, path) if key != "bands" else {**base[key], **value}
        else:
            out[key] = value
    return out


def _number(value, path: str, integer: bool = False, allow_none: bool = False):
    if value is None and allow_none:
        return None
    ok = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ConfigurationError(path, f"must be {kind}, got {value!r}")
    return value


def _law(d: Any) -> InitialLawSpec:
    if not isinstance(d, dict):
        raise ConfigurationError("model.initial_law", "must be an object")
    try:
        return InitialLawSpec.from_dict(d)
    except ConfigurationError as exc:
        raise ConfigurationError(f"model.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except (TypeError, KeyError) as exc:
        raise ConfigurationError("model.initial_law", f"invalid entry ({exc})") from None


def parse_config(data: Any, seed_override: int | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("<root>", "configuration must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError("schema_version", f"unsupported version {version!r}, expected {SCHEMA_VERSION}")
    raw = _merge(DEFAULTS, {k: v for k, v in data.items() if k != "seed"}, "")
    seed = data.get("seed") if seed_override is None else seed_override
    if seed is None:
        raise ConfigurationError("seed", "a master seed is required")
    _number(seed, "seed", integer=True)
    if seed < 0:
        raise ConfigurationError("seed", f"must satisfy seed>=0, got {seed}")
    m = raw["model"]
    for name in ("k", "T"):
        _number(m[name], f"model.{name}")
    _number(m["N"], "model.N", integer=True, allow_none=True)
    try:
        params = ModelParams(float(m["k"]), float(m["T"]), m["N"], 1.0, _law(m["initial_law"]))
    except ConfigurationError as exc:
        if exc.field.startswith("model."):
            raise
        raise ConfigurationError(f"model.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    _number(raw["riccati"]["steps"], "riccati.steps", integer=True)
    _number(raw["riccati"]["N"], "riccati.N", integer=True, allow_none=True)
    n = raw["nash"]
    _number(n["N"], "nash.N", integer=True)
    for key in ("replications", "min_replications", "steps"):
        _number(n[key], f"nash.{key}", integer=True)
    if not isinstance(n["epsilons"], list) or not n["epsilons"]:
        raise ConfigurationError("nash.epsilons", "must be a non-empty list of numbers")
    for e in n["epsilons"]:
        _number(e, "nash.epsilons")
    bands = raw["rates"]["bands"]
    for label, per_p in bands.items():
        if not isinstance(per_p, dict):
            raise ConfigurationError(f"rates.bands.{label}", "must map p to [lo, hi]")
        for p, band in per_p.items():
            if not (isinstance(band, list) and len(band) == 2):
                raise ConfigurationError(f"rates.bands.{label}.{p}", "must be [lo, hi] with null for an open side")
            for b in band:
                _number(b, f"rates.bands.{label}.{p}", allow_none=True)
    cfg = RunConfig(raw, int(seed), params)
    cfg.raw["seed"] = int(seed)
    return cfg


def load_config(path, seed_override: int | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError("<json>", f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_config(data, seed_override)


def experiment_names() -> tuple[str, ...]:
    return EXPERIMENTS
