"""Flat INI configuration with a fixed schema and a stable content hash.

Every key has a declared type and default. Unknown sections or keys are
errors so typos fail loudly. ``config_hash`` digests the training-relevant
sections only, so cosmetic evaluation knobs do not change a run's identity.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from typing import Any

from .data import PhantomSpec
from .models import MODES, FusionConfig, UNetConfig


class ConfigError(ValueError):
    """Unknown key, malformed value, or malformed override."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_list(cast):
    def parse(text: str):
        items = [part.strip() for part in text.split(",") if part.strip()]
        if not items:
            raise ValueError("empty list")
        return tuple(cast(i) for i in items)

    return parse


def _parse_extents(text: str):
    if not text.strip():
        return None
    triple = _parse_list(int)(text)
    if len(triple) != 3:
        raise ValueError(f"expected three extents, got {len(triple)}")
    return triple


_PARSERS = {
    "int": int,
    "float": float,
    "str": str,
    "bool": _parse_bool,
    "floats": _parse_list(float),
    "ints": _parse_list(int),
    "strs": _parse_list(str),
    "extents": _parse_extents,
}

# (type, default) per key; section order here is the canonical order.
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "data": {
        "task": ("str", "phantom"),
        "dir": ("str", "data"),
        "target_extents": ("extents", None),
        "spacing": ("floats", (1.0, 1.0, 1.0)),
    },
    "phantom": {
        "extents": ("extents", (32, 32, 16)),
        "count": ("int", 34),
        "background_cutoff": ("float", 0.15),
        "structure_count": ("int", 2),
        "radius_min": ("float", 4.5),
        "radius_max": ("float", 7.0),
        "edge_sharpness": ("float", 8.0),
        "noise_std": ("float", 0.01),
        "background_amplitude": ("float", 0.25),
        "structure_contrast": ("float", 1.0),
        "seed": ("int", 100),
    },
    "split": {
        "train": ("int", 20),
        "val": ("int", 6),
        "test": ("int", 8),
        "seed": ("int", 0),
    },
    "model": {
        "mode": ("str", "none"),
        "theta": ("float", 0.5),
        "branch_channels": ("int", 8),
        "depth": ("int", 3),
        "base_channels": ("int", 8),
        "num_classes": ("int", 1),
    },
    "train": {
        "lr": ("float", 1e-3),
        "epochs": ("int", 200),
        "batch": ("int", 1),
        "seed": ("int", 0),
        "fraction": ("float", 1.0),
        "val_interval": ("int", 1),
        "trace_bands": ("int", 0),
    },
    "sweep": {
        "fractions": ("floats", (0.2,)),
        "modes": ("strs", ("none", "early", "late")),
        "seeds": ("ints", (0, 1, 2, 3, 4)),
        "subsample_seed": ("int", 0),
    },
    "eval": {
        "bootstrap_b": ("int", 2000),
        "bootstrap_seed": ("int", 0),
        "threshold": ("float", 0.5),
        "n_bands": ("int", 8),
    },
}

# Sections that define what was trained; eval/sweep knobs stay out.
HASHED_SECTIONS = ("data", "phantom", "split", "model", "train")


class Config:
    """Resolved, fully-typed configuration."""

    def __init__(self, values: dict[str, dict[str, Any]]):
        self._values = values

    def get(self, section: str, key: str):
        try:
            return self._values[section][key]
        except KeyError:
            raise ConfigError(f"no such config key {section}.{key}") from None

    def section(self, name: str) -> dict[str, Any]:
        if name not in self._values:
            raise ConfigError(f"no such config section {name}")
        return dict(self._values[name])

    def with_overrides(self, overrides: dict[tuple[str, str], Any]) -> "Config":
        values = {s: dict(kv) for s, kv in self._values.items()}
        for (section, key), value in overrides.items():
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            values[section][key] = value
        return Config(values)

    # -- factory helpers for the typed objects the pipeline consumes --

    def phantom_spec(self) -> PhantomSpec:
        p = self._values["phantom"]
        return PhantomSpec(
            extents=p["extents"] or (32, 32, 16),
            background_cutoff=p["background_cutoff"],
            structure_count=p["structure_count"],
            radius_range=(p["radius_min"], p["radius_max"]),
            edge_sharpness=p["edge_sharpness"],
            noise_std=p["noise_std"],
            background_amplitude=p["background_amplitude"],
            structure_contrast=p["structure_contrast"],
            seed=p["seed"],
        )

    def fusion_config(self, mode: str | None = None) -> FusionConfig:
        m = self._values["model"]
        return FusionConfig(
            mode=m["mode"] if mode is None else mode,
            theta=m["theta"],
            branch_channels=m["branch_channels"],
        )

    def unet_config(self, mode: str | None = None) -> UNetConfig:
        fusion = self.fusion_config(mode)
        in_channels = {"none": 1, "early": 2 * fusion.branch_channels,
                       "late": fusion.branch_channels}[fusion.mode]
        m = self._values["model"]
        return UNetConfig(
            in_channels=in_channels,
            num_classes=m["num_classes"],
            depth=m["depth"],
            base_channels=m["base_channels"],
        )


def _validate(values: dict[str, dict[str, Any]]) -> None:
    mode = values["model"]["mode"]
    if mode not in MODES:
        raise ConfigError(f"model.mode must be one of {MODES}, got {mode!r}")
    for m in values["sweep"]["modes"]:
        if m not in MODES:
            raise ConfigError(f"sweep.modes entry {m!r} is not one of {MODES}")
    theta = values["model"]["theta"]
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"model.theta must lie in (0,1), got {theta}")
    if values["train"]["batch"] != 1:
        raise ConfigError("train.batch: only batch size 1 is supported")
    if values["train"]["epochs"] < 1:
        raise ConfigError("train.epochs must be >= 1")
    if values["train"]["val_interval"] < 1:
        raise ConfigError("train.val_interval must be >= 1")
    if not 0.0 < values["train"]["fraction"] <= 1.0:
        raise ConfigError("train.fraction must lie in (0,1]")
    for f in values["sweep"]["fractions"]:
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"sweep.fractions entry {f} must lie in (0,1]")
    spacing = values["data"]["spacing"]
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ConfigError(f"data.spacing must be three positive values, got {spacing}")


def _convert(section: str, key: str, text: str) -> Any:
    type_name, _ = SCHEMA[section][key]
    try:
        return _PARSERS[type_name](text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc


def parse_override(spec: str) -> tuple[str, str, Any]:
    """Parse one ``section.key=value`` override string."""
    head, sep, text = spec.partition("=")
    section, dot, key = head.partition(".")
    if not sep or not dot or not section or not key:
        raise ConfigError(f"override must look like section.key=value, got {spec!r}")
    if section not in SCHEMA:
        raise ConfigError(f"unknown config section {section!r}")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown config key {section}.{key}")
    return section, key, _convert(section, key, text)


def load_config(path=None, overrides: list[str] | None = None) -> Config:
    """Defaults, then the INI file (if given), then ``--set`` overrides."""
    values = {s: {k: default for k, (_, default) in kv.items()} for s, kv in SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}] in {path}")
            for key, text in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key} in {path}")
                values[section][key] = _convert(section, key, text)
    for spec in overrides or []:
        section, key, value = parse_override(spec)
        values[section][key] = value
    _validate(values)
    return Config(values)


def _canonical(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_canonical(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_hash(cfg: Config, n_hex: int = 12) -> str:
    """Stable digest of the sections that define a training run."""
    buf = io.StringIO()
    for section in HASHED_SECTIONS:
        for key in SCHEMA[section]:
            buf.write(f"{section}.{key}={_canonical(cfg.get(section, key))}\n")
    return hashlib.sha256(buf.getvalue().encode()).hexdigest()[:n_hex]


def describe_schema() -> str:
    """Human-readable key reference for --help and the README."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (type_name, default) in keys.items():
            lines.append(f"  {key} ({type_name}, default {_canonical(default) or 'empty'})")
    return "\n".join(lines)
