"""Scenario files: YAML with SI-suffixed numbers, validated against a JSON schema."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .engine import SimSettings
from .model import ConverterParams, LoadSpec, ModelError
from .units import parse_si

SCHEMA_VERSION = 1
PER_TANK = ("n", "l_r", "l_m", "c_r", "c_o")
CONVERTER_FIELDS = tuple(f.name for f in fields(ConverterParams))
LOAD_FIELDS = tuple(f.name for f in fields(LoadSpec))
SIM_FIELDS = ("dt", "t_end", "event_tol", "ss_tol", "max_cycles")
SWEEPABLE = CONVERTER_FIELDS + LOAD_FIELDS


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file."""


def load_schema(name: str) -> dict:
    text = resources.files("threeport.schemas").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


def bundled_scenarios() -> list[str]:
    root = resources.files("threeport.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("threeport.scenarios").joinpath(f"{name}.yaml")))


@dataclass(frozen=True)
class SweepAxis:
    parameter: str
    values: tuple[float, ...]

    @classmethod
    def linear(cls, parameter: str, start: float, stop: float, count: int) -> "SweepAxis":
        return cls(parameter, tuple(float(v) for v in np.linspace(start, stop, int(count))))


@dataclass(frozen=True)
class ScenarioConfig:
    converter: ConverterParams
    loads: LoadSpec
    sim_overrides: dict = field(default_factory=dict)
    sweep: SweepAxis | None = None
    name: str = "scenario"
    description: str = ""

    @property
    def sim(self) -> SimSettings:
        return SimSettings.for_params(self.converter, **self.sim_overrides)

    def with_sim(self, **overrides) -> "ScenarioConfig":
        merged = dict(self.sim_overrides)
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return replace(self, sim_overrides=merged)

    def with_value(self, parameter: str, value: float) -> "ScenarioConfig":
        """Copy with one converter or load parameter replaced."""
        try:
            if parameter in CONVERTER_FIELDS:
                return replace(self, converter=replace(self.converter, **{parameter: value}))
            if parameter in LOAD_FIELDS:
                return replace(self, loads=replace(self.loads, **{parameter: value}))
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc
        raise ConfigError(f"unknown parameter {parameter!r}")

    def to_dict(self) -> dict:
        conv = {name: getattr(self.converter, name) for name in CONVERTER_FIELDS}
        loads = {
            name: ("open" if math.isinf(getattr(self.loads, name)) else getattr(self.loads, name))
            for name in LOAD_FIELDS
        }
        out = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "description": self.description,
            "converter": conv,
            "loads": loads,
        }
        if self.sim_overrides:
            out["sim"] = dict(self.sim_overrides)
        if self.sweep is not None:
            out["sweep"] = {
                "parameter": self.sweep.parameter,
                "values": ["open" if math.isinf(v) else v for v in self.sweep.values],
            }
        return out


def _num(section: dict, key: str, where: str, allow_inf: bool = False) -> float:
    try:
        return parse_si(section[key], allow_inf=allow_inf)
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def from_dict(raw: dict) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a mapping")
    try:
        jsonschema.validate(raw, load_schema("scenario.schema.json"))
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from exc

    conv_raw = raw["converter"]
    conv: dict[str, float] = {}
    for key in conv_raw:
        conv[key] = _num(conv_raw, key, "converter")
    for base in PER_TANK:
        shared = conv.pop(base, None)
        for k in (1, 2):
            name = f"{base}{k}"
            if name not in conv and shared is not None:
                conv[name] = shared
    v_out = conv.pop("v_out_nominal", None)
    for k in (1, 2):
        if f"n{k}" not in conv and v_out is not None:
            if v_out <= 0:
                raise ConfigError("converter.v_out_nominal must be > 0")
            conv[f"n{k}"] = conv["v_in"] / v_out
    missing = [name for name in CONVERTER_FIELDS
               if name not in conv and name not in ("r_ds_on", "v_f")]
    if missing:
        raise ConfigError(f"converter: missing {', '.join(missing)}")
    try:
        params = ConverterParams(**conv)
    except ModelError as exc:
        raise ConfigError(f"converter: {exc}") from exc

    loads_raw = raw.get("loads", {})
    try:
        loads = LoadSpec(**{k: _num(loads_raw, k, "loads", allow_inf=True) for k in loads_raw})
    except ModelError as exc:
        raise ConfigError(f"loads: {exc}") from exc

    sim_raw = raw.get("sim", {}) or {}
    sim = {}
    for key, value in sim_raw.items():
        sim[key] = int(value) if key == "max_cycles" else _num(sim_raw, key, "sim")
    try:
        SimSettings.for_params(params, **sim)
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc

    sweep = None
    if "sweep" in raw:
        sw = raw["sweep"]
        parameter = sw["parameter"]
        if parameter not in SWEEPABLE:
            raise ConfigError(f"sweep.parameter: unknown parameter {parameter!r}")
        if "values" in sw:
            values = tuple(parse_si(v, allow_inf=True) for v in sw["values"])
            sweep = SweepAxis(parameter, values)
        else:
            sweep = SweepAxis.linear(
                parameter,
                _num(sw, "start", "sweep", allow_inf=False),
                _num(sw, "stop", "sweep", allow_inf=False),
                sw["count"],
            )

    return ScenarioConfig(
        converter=params,
        loads=loads,
        sim_overrides=sim,
        sweep=sweep,
        name=str(raw.get("name", "scenario")),
        description=str(raw.get("description", "")),
    )


def load(path) -> ScenarioConfig:
    """Read a scenario file; a bare name selects a bundled scenario."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and str(path) in bundled_scenarios():
        p = bundled_path(str(path))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return from_dict(raw)


def dumps(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, allow_unicode=True)


def save(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dumps(cfg), encoding="utf-8")
