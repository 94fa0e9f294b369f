"""Run configuration and its ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .objective import LossWeights
from .rela import AGGREGATION_MODES, NO_TARGET_MODES, Variant

PRESETS = {
    "hard_split": {"hard_split_pooling": True},
    "no_minimap": {"disable_minimap": True},
    "no_region_att": {"disable_region_att": True},
    "no_language_att": {"disable_language_att": True},
    "baseline_fusion": {"baseline_fusion": True},
}


@dataclass(frozen=True)
class Config:
    canvas: int = 48
    channels: int = 32
    regions: int = 4
    patch: int = 4
    max_tokens: int = 16
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    w_mask: float = 1.0
    w_minimap: float = 1.0
    w_nt: float = 1.0
    aggregation: str = "normalized"
    nt_mode: str = "classifier"
    mask_threshold: float = 0.5
    nt_threshold: float = 0.5
    hard_split_pooling: bool = False
    disable_minimap: bool = False
    disable_region_att: bool = False
    disable_language_att: bool = False
    baseline_fusion: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.regions < 1:
            raise ConfigError("regions must be at least 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.channels < 1 or self.max_tokens < 1:
            raise ConfigError("epochs, batch_size, channels and max_tokens must be positive")
        if self.canvas % self.patch:
            raise ConfigError(f"canvas {self.canvas} is not divisible by patch {self.patch}")
        if self.regions > self.canvas // self.patch:
            raise ConfigError(f"{self.regions}x{self.regions} regions exceed the feature grid")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
        if self.nt_mode not in NO_TARGET_MODES:
            raise ConfigError(f"nt_mode must be one of {NO_TARGET_MODES}")
        self.variant()

    @property
    def grid(self) -> int:
        return self.canvas // self.patch

    def variant(self) -> Variant:
        return Variant(
            aggregation=self.aggregation,
            hard_split_pooling=self.hard_split_pooling,
            disable_region_att=self.disable_region_att,
            disable_language_att=self.disable_language_att,
            baseline_fusion=self.baseline_fusion,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_mask, 0.0 if self.disable_minimap else self.w_minimap, self.w_nt)

    def replace(self, **changes) -> "Config":
        known = {f.name for f in fields(self)}
        unknown = sorted(set(changes) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return dataclasses.replace(self, **changes)

    def with_preset(self, name: str) -> "Config":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return self.replace(**PRESETS[name])

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        changes = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            changes[key] = _parse(key, value, types[key])
        return (base or cls()).replace(**changes)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.from_text(p.read_text(encoding="utf-8"))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(key: str, value: str, typ):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = value.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ}") from None
