"""Flat ``key=value`` configuration text shared by the CLI, run snapshots and checkpoints."""

from __future__ import annotations

import dataclasses

from cwat.cae import CaeConfig, LayerSpec
from cwat.classifier import TransformerConfig
from cwat.errors import ConfigError
from cwat.model import ModelConfig, preset
from cwat.training import TrainConfig

SECTIONS = {"cae": CaeConfig, "transformer": TransformerConfig, "train": TrainConfig}
DERIVED = {"transformer.input_dim"}


def format_layer_specs(specs):
    return ",".join(f"{s.kernel_size}:{s.stride}:{s.feature_multiplier}" for s in specs)


def parse_layer_specs(text):
    text = text.strip()
    if not text:
        return ()
    specs = []
    for item in text.split(","):
        try:
            k, s, f = (int(v) for v in item.split(":"))
        except ValueError:
            raise ConfigError(f"layer spec {item!r} must be kernel:stride:multiplier") from None
        specs.append(LayerSpec(k, s, f))
    return tuple(specs)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return format_layer_specs(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key, raw, current):
    try:
        if isinstance(current, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return parse_layer_specs(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw.strip()


def to_flat(model_config, train_config):
    flat = {}
    for section, obj in (("cae", model_config.cae), ("transformer", model_config.transformer),
                         ("train", train_config)):
        for f in dataclasses.fields(obj):
            flat[f"{section}.{f.name}"] = getattr(obj, f.name)
    return flat


def to_text(model_config, train_config):
    """Canonical snapshot: sorted ``key=value`` lines."""
    flat = to_flat(model_config, train_config)
    return "".join(f"{k}={_format(flat[k])}\n" for k in sorted(flat))


def parse_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build(overrides=None, base=None):
    """Apply ``{"section.field": text-or-value}`` overrides to a base (model, train) config pair.

    Unknown keys raise :class:`ConfigError`.
    """
    model_config, train_config = base or (preset("default"), TrainConfig())
    parts = {"cae": model_config.cae, "transformer": model_config.transformer, "train": train_config}
    changes = {name: {} for name in parts}
    for key, raw in (overrides or {}).items():
        section, _, name = key.partition(".")
        if section not in parts or name not in {f.name for f in dataclasses.fields(parts[section])}:
            raise ConfigError(f"unknown config key {key!r}")
        if key in DERIVED:
            continue
        current = getattr(parts[section], name)
        changes[section][name] = _coerce(key, raw, current) if isinstance(raw, str) else raw
    new = {name: dataclasses.replace(obj, **changes[name]) for name, obj in parts.items()}
    model = ModelConfig(cae=new["cae"], transformer=new["transformer"]).validate()
    return model, new["train"].validate()


def from_text(text, base=None):
    return build(parse_text(text), base)
