"""Experiment configuration: INI text with sections data/model/train/fusion/perturbation/output.

Every key has a typed default taken from the underlying dataclass, unknown
sections or keys are rejected, and problems are reported all at once with
their ``section.key`` path. ``echo`` writes every key so the output alone
reproduces the run.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .cma import FusionConfig
from .events.synth import SynthConfig
from .nn.model import ModelSpec
from .train import TrainConfig


class ConfigError(ValueError):
    """Configuration problems; ``problems`` holds one ``path: message`` line each."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


_MODEL_KEYS = ("n_conv", "n_fc", "channels", "hidden", "n_out", "dropout", "dtype")


def _defaults() -> dict[str, dict[str, object]]:
    synth = {f.name: getattr(SynthConfig(), f.name) for f in fields(SynthConfig)}
    del synth["samples_per_class"], synth["first_subject"]
    spec = ModelSpec(n_classes=1)
    return {
        "data": {"manifest": "", "train_per_class": 25, "test_per_class": 10, **synth},
        "model": {k: (0 if k == "n_out" else getattr(spec, k)) for k in _MODEL_KEYS},
        "train": {**{f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}, "repeats": 1},
        "fusion": {f.name: getattr(FusionConfig(), f.name) for f in fields(FusionConfig)},
        "perturbation": {"replicate": 1, "pair": "cw,ccw"},
        "output": {"dir": "runs/out", "plots": True, "checkpoint": False},
    }


DEFAULTS = _defaults()
SECTIONS = tuple(DEFAULTS)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(text: str, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            try:
                v = float(text)  # accept 1e6 style integers
            except ValueError:
                v = float("nan")
            if not v.is_integer():
                raise ValueError(f"expected an integer, got {text!r}") from None
            return int(v)
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"expected a number, got {text!r}") from None
    if isinstance(default, tuple):
        kind = type(default[0]) if default else str
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        return tuple(_parse(p, kind()) for p in parts)
    return text


@dataclass
class ExperimentConfig:
    values: dict[str, dict[str, object]]

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls({s: dict(kv) for s, kv in DEFAULTS.items()})

    @classmethod
    def from_text(cls, text: str, overrides: list[str] | tuple[str, ...] = ()) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError([f"syntax: {e}".replace("\n", " ")]) from None
        raw = [(s, k, v) for s in parser.sections() for k, v in parser.items(s)]
        for item in overrides:
            path, sep, value = item.partition("=")
            section, dot, key = path.strip().partition(".")
            if not sep or not dot:
                raise ConfigError([f"--set {item!r}: expected section.key=value"])
            raw.append((section, key.strip(), value))
        return cls.from_pairs(raw)

    @classmethod
    def from_pairs(cls, raw) -> "ExperimentConfig":
        cfg = cls.default()
        problems = []
        for section, key, text in raw:
            if section not in DEFAULTS:
                problems.append(f"{section}: unknown section (valid: {', '.join(SECTIONS)})")
                continue
            if key not in DEFAULTS[section]:
                problems.append(f"{section}.{key}: unknown key")
                continue
            try:
                cfg.values[section][key] = _parse(text, DEFAULTS[section][key])
            except ValueError as e:
                problems.append(f"{section}.{key}: {e}")
        try:
            cfg.validate()
        except ConfigError as e:
            problems += e.problems
        if problems:
            raise ConfigError(problems)
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides=()) -> "ExperimentConfig":
        text = ""
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as e:
                raise ConfigError([f"--config: cannot read {path}: {e.strerror}"]) from None
        return cls.from_text(text, overrides)

    def echo(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section in SECTIONS:
            parser[section] = {k: _format(v) for k, v in self.values[section].items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def set(self, path: str, value) -> "ExperimentConfig":
        section, _, key = path.partition(".")
        values = {s: dict(kv) for s, kv in self.values.items()}
        values[section][key] = value
        return ExperimentConfig(values)

    def __getitem__(self, path: str):
        section, _, key = path.partition(".")
        return self.values[section][key]

    # -- builders -----------------------------------------------------------

    def synth_config(self) -> SynthConfig:
        d = self.values["data"]
        kw = {f.name: d[f.name] for f in fields(SynthConfig) if f.name in d}
        return SynthConfig(**kw)

    def train_config(self, seed: int | None = None) -> TrainConfig:
        t = {k: v for k, v in self.values["train"].items() if k != "repeats"}
        cfg = TrainConfig(**t)
        return cfg if seed is None else replace(cfg, seed=seed)

    def fusion_config(self, **changes) -> FusionConfig:
        return replace(FusionConfig(**self.values["fusion"]), **changes)

    def model_spec(self, n_classes: int) -> ModelSpec:
        d, m = self.values["data"], self.values["model"]
        return ModelSpec(
            height=d["height"], width=d["width"], n_classes=n_classes,
            neuron=self.train_config().neuron_params(), **{k: m[k] for k in _MODEL_KEYS},
        )

    def seeds(self) -> list[int]:
        s = self.values["train"]["seed"]
        return list(range(s, s + self.values["train"]["repeats"]))

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        problems = []

        def collect(section, keys, check):
            try:
                check()
            except ValueError as e:
                for msg in str(e).split("; "):
                    key = next((k for k in sorted(keys, key=len, reverse=True) if k in msg), None)
                    problems.append(f"{section}.{key}: {msg}" if key else f"{section}: {msg}")

        v = self.values
        collect("data", v["data"], lambda: self.synth_config().validate())
        collect("train", v["train"], lambda: self.train_config().validate())
        collect("model", v["model"], lambda: ModelSpec(n_classes=1, **{k: v["model"][k] for k in _MODEL_KEYS}).validate())
        collect("fusion", v["fusion"], lambda: self.fusion_config().validate(v["model"]["n_conv"]))
        if v["data"]["train_per_class"] < 1:
            problems.append("data.train_per_class: must be >= 1")
        if v["data"]["test_per_class"] < 0:
            problems.append("data.test_per_class: must be >= 0")
        if v["train"]["repeats"] < 1:
            problems.append("train.repeats: must be >= 1")
        if v["perturbation"]["replicate"] < 1:
            problems.append("perturbation.replicate: must be >= 1")
        pair = [p for p in v["perturbation"]["pair"].split(",") if p.strip()]
        if pair and len(pair) != 2:
            problems.append("perturbation.pair: expected two class names separated by a comma")
        if problems:
            raise ConfigError(problems)


def help_text() -> str:
    """Defaults for ``--help``."""
    return ExperimentConfig.default().echo()
