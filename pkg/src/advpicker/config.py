"""Experiment configuration: a flat key = value file with section prefixes.

Every key has a default, so an empty file is a valid configuration.
Unknown keys are rejected. The ADVPICKER_OUT environment variable
overrides ``out_dir``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .adversarial import AdvConfig
from .corpus import EntityTemplate, SynthSpec
from .distill import KDConfig
from .errors import ConfigError
from .evaluate import ProbeConfig

ENV_OUT = "ADVPICKER_OUT"

_SPLIT_SEED_OFFSET = {"train": 0, "dev": 1, "test": 2}


@dataclass(frozen=True)
class DataConfig:
    shared_vocab_size: int = 120
    private_vocab_size: int = 400
    kappa: float = 0.3
    train_size: int = 2000
    dev_size: int = 500
    test_size: int = 500
    min_sentence_len: int = 8
    max_sentence_len: int = 14
    entity_types: tuple[str, ...] = ("PER", "LOC", "ORG", "MISC")
    names_per_type: int = 40
    max_mention_len: int = 2
    ambiguous_names: int = 24
    ambiguous_prob: float = 0.5
    trigger_words_per_type: int = 4
    max_entities: int = 3
    seed: int = 9
    # When set, CoNLL files are read from this directory instead of
    # generating synthetic data: {source,target}.{train,dev,test}.conll
    conll_dir: str = ""

    def synth_spec(self, split: str) -> SynthSpec:
        sizes = {"train": self.train_size, "dev": self.dev_size, "test": self.test_size}
        templates = tuple(
            EntityTemplate(t, self.names_per_type, self.max_mention_len, self.ambiguous_prob)
            for t in self.entity_types
        )
        return SynthSpec(
            shared_vocab_size=self.shared_vocab_size,
            private_vocab_size=self.private_vocab_size,
            entity_templates=templates,
            kappa=self.kappa,
            sentence_length_range=(self.min_sentence_len, self.max_sentence_len),
            n_sentences=sizes[split],
            ambiguous_names=self.ambiguous_names,
            trigger_words_per_type=self.trigger_words_per_type,
            max_entities=self.max_entities,
            seed=self.seed + _SPLIT_SEED_OFFSET[split],
        )


@dataclass(frozen=True)
class SelectionConfig:
    rho: float = 0.8
    pooling: str = "mean"

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ConfigError(f"rho must be in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs/default"
    seeds: tuple[int, ...] = (13, 42, 87)
    data: DataConfig = field(default_factory=DataConfig)
    embed_dim: int = 64
    window: int = 2
    discriminator_hidden: int = 64
    adv: AdvConfig = field(default_factory=AdvConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    kd: KDConfig = field(default_factory=KDConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")

    @property
    def out_path(self) -> Path:
        return Path(os.environ.get(ENV_OUT) or self.out_dir)


_SECTIONS = {
    "data": DataConfig,
    "adv": AdvConfig,
    "selection": SelectionConfig,
    "kd": KDConfig,
    "probe": ProbeConfig,
}

_TOP_LEVEL = {"out_dir": str, "seeds": "int_list", "embed_dim": int, "window": int,
              "discriminator_hidden": int}


def _parse_value(raw: str, kind, key: str):
    raw = raw.strip()
    try:
        if kind == "int_list":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "str_list":
            return tuple(v.strip() for v in raw.split(",") if v.strip())
        if kind is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _field_kind(dc_cls, name: str, key: str):
    for f in fields(dc_cls):
        if f.name == name:
            if f.type in ("tuple[int, ...]",):
                return "int_list"
            if f.type in ("tuple[str, ...]",):
                return "str_list"
            return {"int": int, "float": float, "str": str, "bool": bool}[f.type]
    raise ConfigError(f"unknown key: {key}")


def parse_config(text: str) -> ExperimentConfig:
    top: dict = {}
    sections: dict[str, dict] = {name: {} for name in _SECTIONS}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"line {line_no}: unknown section {section!r}")
            kind = _field_kind(_SECTIONS[section], name, key)
            sections[section][name] = _parse_value(value, kind, key)
        else:
            if key not in _TOP_LEVEL:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            top[key] = _parse_value(value, _TOP_LEVEL[key], key)

    return ExperimentConfig(
        **top,
        data=DataConfig(**sections["data"]),
        adv=AdvConfig(**sections["adv"]),
        selection=SelectionConfig(**sections["selection"]),
        kd=KDConfig(**sections["kd"]),
        probe=ProbeConfig(**sections["probe"]),
    )


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def dump_config(cfg: ExperimentConfig) -> str:
    """Render a configuration as a parseable key = value listing."""
    lines = [f"out_dir = {cfg.out_dir}",
             f"seeds = {','.join(str(s) for s in cfg.seeds)}",
             f"embed_dim = {cfg.embed_dim}",
             f"window = {cfg.window}",
             f"discriminator_hidden = {cfg.discriminator_hidden}"]
    for section, obj in (("data", cfg.data), ("adv", cfg.adv), ("selection", cfg.selection),
                         ("kd", cfg.kd), ("probe", cfg.probe)):
        for f in fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
