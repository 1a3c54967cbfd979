"""Run configuration: flat key=value files with dotted sections plus overrides.

Sections map to the config dataclasses: hierarchy.*, train.*, window.*,
scenario.*. Unknown keys are rejected before any computation starts.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, get_args, get_origin

from .core import ConfigError, HierarchyConfig
from .synth import ScenarioConfig
from .training import TrainConfig


@dataclass(frozen=True)
class WindowSpec:
    window_length: int = 150
    stride: int = 75

    def __post_init__(self):
        if self.window_length <= 0 or self.stride <= 0:
            raise ConfigError("window.window_length and window.stride must be positive")
        if self.stride > self.window_length:
            raise ConfigError("window.stride must not exceed window.window_length")


@dataclass(frozen=True)
class RunConfig:
    hierarchy: HierarchyConfig
    train: TrainConfig
    window: WindowSpec
    scenario: ScenarioConfig


_SECTIONS = {
    "hierarchy": HierarchyConfig,
    "train": TrainConfig,
    "window": WindowSpec,
    "scenario": ScenarioConfig,
}


def _convert(raw: str, annotation, key: str):
    origin = get_origin(annotation)
    if origin is tuple:
        item_types = get_args(annotation)
        item = item_types[0]
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return tuple(item(p) for p in parts)
    if annotation is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise HiertrackError(f"config key {key}: cannot parse boolean from {raw!r}")
    if annotation is int:
        return int(raw)
    if annotation is float:
        return float(raw)
    return raw


def _field_types(cls) -> Dict[str, object]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def parse_config(
    path: Optional[Path] = None, overrides: Sequence[str] = ()
) -> RunConfig:
    """Build a RunConfig from an optional file plus key=value overrides."""
    values: Dict[str, Dict[str, object]] = {name: {} for name in _SECTIONS}

    def apply(key: str, raw: str, where: str) -> None:
        section, _, name = key.partition(".")
        if section not in _SECTIONS or not name:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        cls = _SECTIONS[section]
        types = _field_types(cls)
        if name not in types:
            raise ConfigError(f"{where}: unknown config key {key!r}")
        try:
            values[section][name] = _convert(raw.strip(), types[name], key)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from exc

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{n}: expected key=value, got {stripped!r}")
            key, _, raw = stripped.partition("=")
            apply(key.strip(), raw, f"{path}:{n}")

    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        apply(key.strip(), raw, "override")

    try:
        return RunConfig(
            hierarchy=HierarchyConfig(**values["hierarchy"]),
            train=TrainConfig(**values["train"]),
            window=WindowSpec(**values["window"]),
            scenario=ScenarioConfig(**values["scenario"]),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def default_config_text() -> str:
    """A config file listing every key at its default value."""
    lines: List[str] = []
    for section, cls in _SECTIONS.items():
        instance = cls()
        for f in dataclasses.fields(cls):
            value = getattr(instance, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{f.name} = {value}")
        lines.append("")
    return "\n".join(lines)
