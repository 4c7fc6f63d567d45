"""Run configuration: a JSON file with whitelisted keys plus command-line overrides.

Precedence, lowest to highest: built-in defaults, the config file, ``--set
section.key=value`` overrides, then dedicated flags such as ``--steps``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .fileio import atomic_write_bytes
from .synthdata import SceneSpec
from .trainer import TrainConfig

RESOLVED_NAME = "resolved_config.json"


@dataclass
class InferConfig:
    runs: int = 4
    ddim_steps: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.runs < 1 or self.ddim_steps < 1:
            raise ValueError("runs and ddim_steps must be >= 1")


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SceneSpec = field(default_factory=SceneSpec)
    infer: InferConfig = field(default_factory=InferConfig)

    SECTIONS = ("train", "scene", "infer")

    def to_dict(self) -> dict:
        out = {}
        for name in self.SECTIONS:
            d = asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / RESOLVED_NAME
        atomic_write_bytes(path, self.to_json().encode("utf-8"))
        return path


class ConfigError(ValueError):
    pass


_SECTION_TYPES = {"train": TrainConfig, "scene": SceneSpec, "infer": InferConfig}


def _build(cls, values: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    kwargs = {}
    for k, v in values.items():
        default = getattr(cls(), k)
        kwargs[k] = tuple(v) if isinstance(default, tuple) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{cls.__name__}: {err}") from None


def _coerce(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(items: list[str]) -> dict[str, dict]:
    """``["train.lr=1e-4", "scene.primitives=[2,3]"]`` -> nested dict; values parsed as JSON."""
    out: dict[str, dict] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section {section!r}")
        out.setdefault(section, {})[name] = _coerce(value)
    return out


def resolve(path=None, overrides: dict[str, dict] | None = None) -> RunConfig:
    raw: dict[str, dict] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        # "command" records how a resolved file was produced; it carries no settings
        unknown = sorted(set(raw) - set(_SECTION_TYPES) - {"command"})
        if unknown:
            raise ConfigError(f"unknown config sections: {unknown}")
    merged = {s: dict(raw.get(s, {})) for s in _SECTION_TYPES}
    for section, values in (overrides or {}).items():
        merged[section].update(values)
    return RunConfig(**{s: _build(cls, merged[s]) for s, cls in _SECTION_TYPES.items()})
