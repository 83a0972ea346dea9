"""Flat key-value configuration files.

Format: one ``group.field = value`` per line, ``#`` comments, blank lines
ignored. Groups: ``train``, ``generator``, ``discriminator``, ``curriculum``
(the latter fills the train config's transform ranges). Example::

    train.iterations = 2000
    train.seed = 7
    generator.depth = 3
    discriminator.num_scales = 3
    curriculum.max_shift = 0.1

Presets provide the baseline the file (and any --set overrides) refine:
``default`` is the full-scale recipe, ``desk`` a reduced CPU-scale one.
"""

from __future__ import annotations

import dataclasses

from .discriminator import DiscriminatorConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .training import CurriculumRanges, TrainConfig

PRESETS = {
    "default": {},
    "desk": {
        "train.iterations": "2000",
        "train.crop_min": "64",
        "train.crop_max": "64",
        "train.curriculum_iters": "1000",
        "generator.depth": "3",
        "generator.base_channels": "32",
        "generator.channel_cap": "64",
        "generator.residual_blocks": "2",
        "discriminator.num_scales": "3",
        "discriminator.channels": "32",
    },
}

_GROUPS = ("train", "generator", "discriminator", "curriculum")


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        group = key.split(".", 1)[0]
        if group not in _GROUPS:
            raise ConfigError(f"line {lineno}: unknown group {group!r}")
        out[key] = value
    return out


def _coerce(field: dataclasses.Field, raw: str, key: str):
    t = field.type
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    if t in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if t in ("str", str):
        return raw
    raise ConfigError(f"{key}: field type {t!r} is not settable from text")


def _build(cls, group: str, kv: dict[str, str]):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in kv.items():
        g, _, name = key.partition(".")
        if g != group:
            continue
        if name not in fields:
            raise ConfigError(f"unknown field {key!r}")
        kwargs[name] = _coerce(fields[name], raw, key)
    return kwargs


def build_configs(kv: dict[str, str]):
    """(TrainConfig, GeneratorConfig, DiscriminatorConfig) from flat pairs."""
    for key in kv:
        g, _, name = key.partition(".")
        if not name:
            raise ConfigError(f"key {key!r} has no field part")
    ranges = CurriculumRanges(**_build(CurriculumRanges, "curriculum", kv))
    train_kwargs = _build(TrainConfig, "train", kv)
    if "transform_ranges" in train_kwargs:
        raise ConfigError("set curriculum.* keys instead of train.transform_ranges")
    train = TrainConfig(transform_ranges=ranges, **train_kwargs)
    gen = GeneratorConfig(**_build(GeneratorConfig, "generator", kv))
    disc = DiscriminatorConfig(**_build(DiscriminatorConfig, "discriminator", kv))
    return train, gen, disc


def load_configs(preset: str = "default", config_path=None,
                 overrides: dict[str, str] | None = None):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    kv = dict(PRESETS[preset])
    if config_path is not None:
        with open(config_path, "r", encoding="utf-8") as fh:
            kv.update(parse_config_text(fh.read()))
    if overrides:
        for key in overrides:
            if key.split(".", 1)[0] not in _GROUPS:
                raise ConfigError(f"unknown group in override {key!r}")
        kv.update(overrides)
    return build_configs(kv)
