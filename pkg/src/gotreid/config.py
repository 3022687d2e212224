"""Flat ``key = value`` experiment configuration.

Keys are ``<section>.<field>`` for every field of the section dataclasses
below, plus the four ablation flags.  Lines starting with ``#`` and blank
lines are ignored.  Lists are comma separated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .evaluation import ProtocolConfig
from .losses import LossConfig
from .ot import SinkhornConfig


@dataclass(frozen=True)
class ModelSection:
    widths: tuple = (64, 64, 32)
    heads: int = 4
    leaky_slope: float = 0.2
    bn_eps: float = 1e-5
    precomputed: bool = False
    skeleton_file: str = ""


@dataclass(frozen=True)
class TrainSection:
    base_lr: float = 0.02
    decay_epochs: tuple = (15, 25)
    decay_factors: tuple = (0.1, 0.01)
    total_epochs: int = 40
    momentum: float = 0.9
    seed: int = 0
    steps_per_epoch: int = 0
    P: int = 8
    Q: int = 4
    ot_outer_iter: int = 3  # GOT rounds per training step


@dataclass(frozen=True)
class SplitSection:
    kind: str = "sample"  # "sample" or "identity"
    train_fraction: float = 0.5
    seed: int = 0


@dataclass(frozen=True)
class FlagSection:
    use_ot: bool = True
    use_contrastive: bool = True
    use_gat: bool = True
    use_channel_exchange: bool = True


SECTIONS = {
    "synth": SynthConfig,
    "loss": LossConfig,
    "sinkhorn": SinkhornConfig,
    "model": ModelSection,
    "train": TrainSection,
    "split": SplitSection,
    "protocol": ProtocolConfig,
    "flags": FlagSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    split: SplitSection = field(default_factory=SplitSection)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    flags: FlagSection = field(default_factory=FlagSection)

    def __post_init__(self):
        if self.flags.use_channel_exchange and not self.flags.use_gat:
            raise ConfigError("flags.use_channel_exchange requires flags.use_gat")
        if self.split.kind not in ("sample", "identity"):
            raise ConfigError(f"split.kind must be 'sample' or 'identity', got {self.split.kind!r}")

    # -- flat view ------------------------------------------------------------
    def flat(self) -> dict:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            for f in fields(section):
                out[f"{name}.{f.name}"] = getattr(section, f.name)
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in sorted(self.flat().items()))

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def as_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.flat().items())}

    def override(self, updates: dict) -> "ExperimentConfig":
        """Apply ``{"section.field": value}`` updates; string values are parsed."""
        groups: dict[str, dict] = {}
        for key, raw in updates.items():
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise ConfigError(f"unknown config key {key!r}")
            ftypes = {f.name: f for f in fields(SECTIONS[section])}
            if name not in ftypes:
                raise ConfigError(f"unknown config key {key!r}")
            current = getattr(getattr(self, section), name)
            groups.setdefault(section, {})[name] = (
                _parse(raw, current, key) if isinstance(raw, str) else raw)
        kwargs = {}
        for section, vals in groups.items():
            try:
                kwargs[section] = replace(getattr(self, section), **vals)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid {section} settings: {exc}") from exc
        try:
            return replace(self, **kwargs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return self.override({"synth.seed": seed, "train.seed": seed, "split.seed": seed,
                              "protocol.seed": seed})


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text: str, like, key: str):
    text = text.strip()
    try:
        if isinstance(like, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            if not text:
                return ()
            items = [t.strip() for t in text.split(",")]
            proto = like[0] if like else 0.0
            return tuple(_parse(t, proto, key) for t in items)
        return text
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {type(like).__name__}") from exc


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def read_overrides(path) -> dict:
    """The raw ``key -> text`` pairs of a config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_text(text)


def load_config(path=None, overrides: dict | None = None,
                base: ExperimentConfig | None = None) -> ExperimentConfig:
    """``base`` (defaults if omitted), then the file at ``path``, then ``overrides``."""
    cfg = ExperimentConfig() if base is None else base
    if path is not None:
        cfg = cfg.override(read_overrides(path))
    if overrides:
        cfg = cfg.override(overrides)
    return cfg


def from_text(text: str) -> ExperimentConfig:
    return ExperimentConfig().override(parse_text(text))
