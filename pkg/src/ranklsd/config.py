"""Run configuration in a canonical ``section.key = value`` text format.

The canonical text lists sections in a fixed order and fields in declaration
order, so equal configs serialize to identical bytes and share a hash.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields
from typing import Any

from .inference import DetectionConfig
from .losses import LossWeights
from .model.detector import ModelConfig
from .model.train import OptimConfig
from .rerank import RerankWeights
from .synthdata import SceneSpec

SEED_ENV = "RANKLSD_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSettings:
    seed: int = 0
    out_dir: str = "runs/default"
    train_scenes: int = 1000
    eval_scenes: int = 100
    eval_seed: int = 1000  # scene-spec seed of the held-out set
    log_every: int = 50
    eval_every: int = 0  # 0: only at the end


SECTIONS = {
    "run": RunSettings,
    "model": ModelConfig,
    "loss": LossWeights,
    "rerank": RerankWeights,
    "detect": DetectionConfig,
    "data": SceneSpec,
    "optim": OptimConfig,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSettings = field(default_factory=RunSettings)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    rerank: RerankWeights = field(default_factory=RerankWeights)
    detect: DetectionConfig = field(default_factory=DetectionConfig)
    data: SceneSpec = field(default_factory=SceneSpec)
    optim: OptimConfig = field(default_factory=OptimConfig)

    def to_text(self) -> str:
        return dump_sections({name: getattr(self, name) for name in SECTIONS})

    def hash(self) -> str:
        return config_hash(self.to_text())

    def with_overrides(self, **dotted: Any) -> "RunConfig":
        """Copy with ``section__key=value`` style overrides, e.g. ``optim__steps=10``."""
        pairs = {}
        for k, v in dotted.items():
            sec, _, key = k.partition("__")
            pairs.setdefault(sec, {})[key] = v
        return _build(self, pairs)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """Parse; unspecified keys keep their defaults."""
        pairs: dict[str, dict[str, str]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            sec, dot, name = key.partition(".")
            if not dot or sec not in SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section in {key!r}")
            names = {f.name: f for f in fields(SECTIONS[sec])}
            if name not in names:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if name in pairs.get(sec, {}):
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            default = getattr(SECTIONS[sec](), name)
            pairs.setdefault(sec, {})[name] = parse_value(value, default, key)
        return _build(cls(), pairs)

    @classmethod
    def load(cls, path, apply_env: bool = True) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            cfg = cls.from_text(fh.read())
        return apply_seed_env(cfg) if apply_env else cfg


def _build(base: RunConfig, pairs: dict[str, dict[str, Any]]) -> RunConfig:
    parts = {}
    for sec, cls in SECTIONS.items():
        cur = getattr(base, sec)
        d = {f.name: getattr(cur, f.name) for f in fields(cls)}
        unknown = set(pairs.get(sec, {})) - set(d)
        if unknown:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(unknown)}")
        d.update(pairs.get(sec, {}))
        try:
            parts[sec] = cls(**d)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"[{sec}] {err}") from err
    extra = set(pairs) - set(SECTIONS)
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    return RunConfig(**parts)


def apply_seed_env(cfg: RunConfig) -> RunConfig:
    """``RANKLSD_SEED`` overrides the run seed when set."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return cfg
    try:
        seed = int(raw)
    except ValueError as err:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from err
    return cfg.with_overrides(run__seed=seed)


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, str):
        if v != v.strip() or any(c in v for c in "#\n=,"):
            raise ConfigError(f"string value {v!r} cannot be written canonically")
        return v
    raise ConfigError(f"unsupported value type {type(v).__name__}")


def parse_value(text: str, default: Any, key: str = "") -> Any:
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            proto = default[0] if default else 0.0
            return tuple(parse_value(s, proto, key) for s in items)
        return text
    except ValueError as err:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(default).__name__}") from err


def dump_sections(sections: dict[str, Any]) -> str:
    lines = []
    for sec, obj in sections.items():
        for f in fields(obj):
            lines.append(f"{sec}.{f.name} = {format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def header_comment(cfg: RunConfig) -> str:
    """One-line provenance comment for artifacts."""
    return f"config-hash {cfg.hash()}"

