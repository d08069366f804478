"""Experiment configuration: YAML files, flag overrides and per-command schemas."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError

OUTPUT_DIR_ENV = "LORADP_OUTPUT_DIR"
REQUIRED = object()

# name -> (kind, default). kinds: int, float, str, bool, ints, floats, int|ints, strs, mapping
SCHEMAS: dict[str, dict[str, tuple[str, Any]]] = {
    "verify-identity": {
        "n": ("int", 128), "m": ("int", 96), "r": ("int", 8), "T": ("int", 50),
        "eta": ("float", 0.1), "samples": ("int", 64), "tolerance": ("float", 1e-10),
    },
    "lemma1": {
        "m": ("int|ints", REQUIRED), "r": ("int|ints", REQUIRED), "trials": ("int", 100_000),
        "q": ("str", "ones"), "index": ("int", 0),
    },
    "gram-stats": {
        "m": ("int", 64), "r": ("int", 16), "trials": ("int", 1_000_000),
        "cross_trials": ("int", 1_000_000), "vg_samples": ("int", 1_000_000),
    },
    "moments": {
        "k": ("ints", [1, 2, 4, 8]), "orders": ("ints", [1, 2, 3]), "samples": ("int", 1_000_000),
    },
    "tv-scaling": {
        "m_grid": ("ints", [64, 128, 256, 512]), "r_grid": ("ints", [4, 8, 16, 32]),
        "trials": ("int", 20_000), "seeds": ("int", 5), "bins": ("int", 64),
        "metric": ("str", "ks"), "reference_m": ("int", 768), "reference_r": ("int", 16),
    },
    "dp-compare": {
        "n": ("int", 64), "m": ("int", 512), "r": ("int", 16), "trials": ("int", 10_000),
        "clip": ("float", 1.0), "noise": ("float", 1.0), "batch": ("int", 16),
        "row_norm_span": ("float", 10.0),
    },
    "noise-profile": {
        "width": ("int", 64), "adapter_layers": ("int", 3), "classes": ("int", 10),
        "batch": ("int", 200), "eta": ("float", 0.1), "ranks": ("ints", [2, 4, 8, 16, 32]),
        "seeds": ("int", 20),
    },
    "mia": {
        "methods": ("strs", ["full", "lora:2", "lora:8", "lora_frozen:8", "dpsgd"]),
        "seeds": ("int", 10), "study": ("mapping", {}),
    },
    "ablate-r": {
        "ranks": ("ints", [2, 4, 8, 16]), "seeds": ("int", 10), "kind": ("str", "lora"),
        "study": ("mapping", {}),
    },
}

COMMANDS = tuple(SCHEMAS)
TOP_LEVEL = ("command", "seed", "parallelism", "output_dir", "params")


@dataclass
class ExperimentConfig:
    command: str
    seed: int = 0
    parallelism: int = 1
    output_dir: str = ""
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(kind: str, value: Any, path: str):
    def bad():
        return ConfigError(f"{path}: expected {kind}, got {value!r}", field=path)

    def as_int(v):
        if isinstance(v, bool) or not isinstance(v, int):
            if isinstance(v, float) and v.is_integer():
                return int(v)
            raise bad()
        return v

    def as_float(v):
        # YAML 1.1 reads exponent forms without a dot (1e-10) as strings
        if isinstance(v, str):
            try:
                return float(v)
            except ValueError:
                raise bad() from None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise bad()
        return float(v)

    def as_str(v):
        if not isinstance(v, str):
            raise bad()
        return v

    if kind == "int":
        return as_int(value)
    if kind == "float":
        return as_float(value)
    if kind == "str":
        return as_str(value)
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind in ("ints", "floats", "strs"):
        if not isinstance(value, (list, tuple)):
            raise bad()
        conv = {"ints": as_int, "floats": as_float, "strs": as_str}[kind]
        return [conv(v) for v in value]
    if kind == "int|ints":
        if isinstance(value, (list, tuple)):
            return [as_int(v) for v in value]
        return as_int(value)
    if kind == "mapping":
        if not isinstance(value, Mapping):
            raise bad()
        return dict(value)
    raise AssertionError(kind)


def validate(raw: Mapping[str, Any]) -> ExperimentConfig:
    """Check a raw mapping against the command schema and fill defaults."""
    unknown = [k for k in raw if k not in TOP_LEVEL]
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}", field=unknown[0])
    command = raw.get("command")
    if command not in SCHEMAS:
        raise ConfigError(f"command must be one of {', '.join(COMMANDS)}; got {command!r}", field="command")
    seed = _coerce("int", raw.get("seed", 0), "seed")
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer", field="seed")
    parallelism = _coerce("int", raw.get("parallelism", 1), "parallelism")
    if parallelism < 1:
        raise ConfigError("parallelism must be >= 1", field="parallelism")
    output_dir = raw.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV) or str(Path("runs") / command)
    output_dir = _coerce("str", output_dir, "output_dir")
    params_in = raw.get("params") or {}
    if not isinstance(params_in, Mapping):
        raise ConfigError("params must be a mapping", field="params")
    schema = SCHEMAS[command]
    unknown = [k for k in params_in if k not in schema]
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}", field=f"params.{unknown[0]}")
    params = {}
    for name, (kind, default) in schema.items():
        path = f"params.{name}"
        if name in params_in:
            params[name] = _coerce(kind, params_in[name], path)
        elif default is REQUIRED:
            raise ConfigError(f"missing required field {path}", field=path)
        else:
            params[name] = default if not isinstance(default, (list, dict)) else type(default)(default)
    return ExperimentConfig(command=command, seed=seed, parallelism=parallelism,
                            output_dir=output_dir, params=params)


def parse_override(text: str) -> tuple[str, Any]:
    """``key=value`` with the value read as YAML (so ``[1, 2]`` is a list)."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        return key.strip(), yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {exc}", field=f"params.{key}") from exc


def load_file(path: str | os.PathLike) -> dict:
    """Read a config or a run manifest (its ``config`` section is used)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = (json.load(fh) if str(path).endswith(".json") else yaml.safe_load(fh)) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    if "manifest_version" in data:
        data = data.get("config") or {}
    return dict(data)


def parse_config(path: str | os.PathLike | None = None, command: str | None = None,
                 seed: int | None = None, parallelism: int | None = None,
                 output_dir: str | None = None, params: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Merge a file (if any) with flag values; flags win."""
    raw = load_file(path) if path is not None else {}
    if command is not None:
        if raw.get("command") not in (None, command):
            raise ConfigError(f"config file is for {raw['command']!r}, not {command!r}", field="command")
        raw["command"] = command
    for key, value in (("seed", seed), ("parallelism", parallelism), ("output_dir", output_dir)):
        if value is not None:
            raw[key] = value
    if params:
        merged = dict(raw.get("params") or {})
        merged.update(params)
        raw["params"] = merged
    return validate(raw)


def emit_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True)


def parse_config_text(text: str) -> ExperimentConfig:
    return validate(yaml.safe_load(text) or {})
