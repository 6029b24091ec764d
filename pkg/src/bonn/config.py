"""Per-command settings: defaults, JSON config files, and flag overrides.

Resolution order is defaults < config file < ``--set key=value`` flags.
Every key is declared up front with a caster; unknown keys and uncastable
values raise :class:`ConfigError`. The fully-resolved settings are written
next to each command's outputs so runs can be reproduced from the artifact
directory alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .experiments import DEFAULT_GATE_ERROR, DEFAULT_READOUT_FLIP


class ConfigError(Exception):
    """A setting is unknown, malformed, or inconsistent."""


def _int(value) -> int:
    if isinstance(value, bool):
        raise ValueError("expected an integer")
    if isinstance(value, int):
        return value
    return int(str(value), 10)


def _float(value) -> float:
    if isinstance(value, bool):
        raise ValueError("expected a number")
    return float(value)


def _str(value) -> str:
    if not isinstance(value, str):
        raise ValueError("expected a string")
    return value


def _optional(cast: Callable) -> Callable:
    def parse(value):
        if value is None or (isinstance(value, str) and value.lower() in ("", "none")):
            return None
        return cast(value)

    return parse


def _int_tuple(value) -> tuple:
    if isinstance(value, str):
        parts = [p for p in value.split(",") if p.strip()]
        return tuple(_int(p.strip()) for p in parts)
    if isinstance(value, (list, tuple)):
        return tuple(_int(v) for v in value)
    raise ValueError("expected a comma-separated list of integers")


@dataclass(frozen=True)
class Setting:
    default: object
    cast: Callable


_GEN_DATA = {
    "num_scans": Setting(10, _int),
    "edge": Setting(96, _int),
    "block_edge": Setting(16, _int),
    "prevalence": Setting(0.025, _float),
    "output": Setting("dataset.bonn", _str),
}

_TRAIN = {
    "dataset": Setting("dataset.bonn", _str),
    "variant": Setting("fnn", _str),
    "mode": Setting("pe", _str),
    "epochs": Setting(10, _int),
    "batch_size": Setting(32, _int),
    "learning_rate": Setting(None, _optional(_float)),
    "momentum": Setting(0.9, _float),
    "optimizer": Setting("sgd", _str),
    "sigma_lik": Setting(0.1, _float),
    "kl_scale": Setting(None, _optional(_float)),
    "mc_samples": Setting(1, _int),
    "eval_draws": Setting(16, _int),
    "ensemble_size": Setting(5, _int),
    "dropout_rate": Setting(0.1, _float),
    "hidden_dim": Setting(128, _int),
    "latent_dim": Setting(64, _int),
    "conv1_stride": Setting(2, _int),
    "layout_kind": Setting("butterfly", _str),
    "orthogonality_check": Setting("epoch", _str),
    "checkpoint": Setting("model.bonnc", _str),
    "resume": Setting(None, _optional(_str)),
}

_EVALUATE = {
    "dataset": Setting("dataset.bonn", _str),
    "checkpoint": Setting("model.bonnc", _str),
    "eval_draws": Setting(None, _optional(_int)),
}

_FIDELITY = {
    "n": Setting(8, _int),
    "num_inputs": Setting(8, _int),
    "input_kind": Setting("random", _str),
    "shots_small": Setting(1000, _int),
    "shots_large": Setting(10000, _int),
    "gate_error": Setting(DEFAULT_GATE_ERROR, _float),
    "readout_flip": Setting(DEFAULT_READOUT_FLIP, _float),
}

_HW_FRACTION = {
    "dataset": Setting("dataset.bonn", _str),
    "checkpoint": Setting("model.bonnc", _str),
    "block_index": Setting(-1, _int),
    "slice_index": Setting(14, _int),
    "shots": Setting(5000, _int),
    "repeats": Setting(5, _int),
    "fractions": Setting(tuple(range(0, 101, 10)), _int_tuple),
    "gate_error": Setting(0.0, _float),
    "readout_flip": Setting(0.0, _float),
}

COMMAND_SCHEMAS = {
    "gen-data": _GEN_DATA,
    "train": _TRAIN,
    "evaluate": _EVALUATE,
    "experiment-fidelity": _FIDELITY,
    "experiment-hw-fraction": _HW_FRACTION,
}


def _apply(schema: dict, settings: dict, key: str, value, source: str) -> None:
    if key not in schema:
        known = ", ".join(sorted(schema))
        raise ConfigError(f"unknown setting {key!r} in {source}; valid keys: {known}")
    try:
        settings[key] = schema[key].cast(value)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r} in {source}: {exc}") from exc


def resolve(
    command: str,
    config_path: str | None = None,
    overrides: tuple[str, ...] = (),
    seed: int | None = None,
) -> dict:
    """Merged settings for one command, including the resolved ``seed``."""
    if command not in COMMAND_SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    schema = COMMAND_SCHEMAS[command]
    settings = {key: s.default for key, s in schema.items()}
    file_seed = None

    if config_path is not None:
        try:
            raw = json.loads(Path(config_path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        source = f"config file {config_path}"
        for key, value in raw.items():
            if key == "seed":
                try:
                    file_seed = _int(value)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"bad value for 'seed' in {source}: {exc}") from exc
            else:
                _apply(schema, settings, key, value, source)

    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        _apply(schema, settings, key.strip(), value, "--set override")

    if seed is not None:
        resolved_seed = seed
    elif file_seed is not None:
        resolved_seed = file_seed
    else:
        resolved_seed = 0
    if resolved_seed < 0:
        raise ConfigError(f"seed must be nonnegative, got {resolved_seed}")
    settings["seed"] = resolved_seed
    return settings


def write_resolved(settings: dict, command: str, out_dir: Path) -> Path:
    """Record the fully-resolved settings alongside the command's outputs."""
    payload = {"command": command}
    for key, value in settings.items():
        payload[key] = list(value) if isinstance(value, tuple) else value
    path = out_dir / "resolved_config.json"
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    return path
