"""Typed INI-style run configuration.

One section per concern; every key must be known, values are coerced to
the type of the field's default::

    [model]
    patch_size = 32
    [loss]
    beta_source = paper
    [train]
    mode = exclusive
    epochs = 200
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..densenet import ModelConfig, paper_config, toy_config
from ..losses import DEFAULT_EPS, PAPER_BETAS, PAPER_LAMBDA, LossConfig
from .preprocess import StepDecay


class ConfigFileError(ValueError):
    pass


MODES = ("exclusive", "single")
BETA_SOURCES = ("paper", "formula", "manual")


@dataclass
class LossSettings:
    beta_source: str = "paper"
    beta_csf: float = PAPER_BETAS["csf"]
    beta_wm: float = PAPER_BETAS["wm"]
    beta_single: float = 1.0
    recall_lambda: float = PAPER_LAMBDA
    eps: float = DEFAULT_EPS


@dataclass
class TrainSettings:
    mode: str = "exclusive"
    epochs: int = 200
    patches_per_epoch: int = 8
    batch_size: int = 2
    lr: float = 5e-4
    lr_decay: float = 0.9
    lr_interval: int = 500
    seed: int = 0
    folds: int = 5
    val_every: int = 10
    threshold: float = 0.5
    overlap: float = 0.5
    augment: bool = True


@dataclass
class TrainingConfig:
    model: ModelConfig = field(default_factory=toy_config)
    loss: LossSettings = field(default_factory=LossSettings)
    train: TrainSettings = field(default_factory=TrainSettings)

    @property
    def mode(self) -> str:
        return self.train.mode

    @property
    def schedule(self) -> StepDecay:
        return StepDecay(self.train.lr, self.train.lr_decay, self.train.lr_interval)

    @property
    def steps_per_epoch(self) -> int:
        return -(-self.train.patches_per_epoch // self.train.batch_size)

    def validate(self) -> None:
        t, l = self.train, self.loss
        if t.mode not in MODES:
            raise ConfigFileError(f"train.mode must be one of {MODES}, got {t.mode!r}")
        if l.beta_source not in BETA_SOURCES:
            raise ConfigFileError(f"loss.beta_source must be one of {BETA_SOURCES}, got {l.beta_source!r}")
        for name in ("patches_per_epoch", "batch_size", "lr", "lr_interval", "val_every"):
            if not getattr(t, name) > 0:
                raise ConfigFileError(f"train.{name} must be positive")
        if t.epochs < 0:
            raise ConfigFileError("train.epochs must be non-negative")
        if t.folds < 2:
            raise ConfigFileError("train.folds must be at least 2")
        if not 0 < t.lr_decay <= 1:
            raise ConfigFileError("train.lr_decay must lie in (0, 1]")
        for name in ("beta_csf", "beta_wm", "beta_single", "eps"):
            if not getattr(l, name) > 0:
                raise ConfigFileError(f"loss.{name} must be positive")
        want_head, want_out = ("sigmoid", 2) if t.mode == "exclusive" else ("softmax", 4)
        if self.model.head != want_head or self.model.out_channels != want_out:
            raise ConfigFileError(
                f"{t.mode} mode needs a {want_head} head with {want_out} outputs, "
                f"model has {self.model.head} with {self.model.out_channels}")
        self.model.validate()

    def loss_config(self, betas: dict[str, float]) -> LossConfig:
        cfg = LossConfig(betas=dict(betas), recall_lambda=self.loss.recall_lambda, eps=self.loss.eps,
                         mode=self.train.mode)
        cfg.validate()
        return cfg

    def with_mode(self, mode: str) -> "TrainingConfig":
        """Same trunk, schedule and seed with the head swapped for ``mode``."""
        head, out = ("sigmoid", 2) if mode == "exclusive" else ("softmax", 4)
        return TrainingConfig(replace(self.model, head=head, out_channels=out), replace(self.loss),
                              replace(self.train, mode=mode))

    def with_seed(self, seed: int) -> "TrainingConfig":
        return TrainingConfig(replace(self.model, seed=seed), replace(self.loss),
                              replace(self.train, seed=seed))

    def sections(self) -> dict[str, dict]:
        return {"model": self.model.to_dict(), "loss": asdict(self.loss), "train": asdict(self.train)}

    def to_text(self) -> str:
        lines = []
        for name, values in self.sections().items():
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)


def preset(name: str, mode: str = "exclusive") -> TrainingConfig:
    if name == "toy":
        cfg = TrainingConfig()
    elif name == "paper":
        cfg = TrainingConfig(model=paper_config(), train=TrainSettings(epochs=2500))
    else:
        raise ConfigFileError(f"unknown preset {name!r}; choose 'toy' or 'paper'")
    return cfg.with_mode(mode)


def _coerce(section: str, key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigFileError(f"[{section}] {key} = {raw!r}: expected {type(default).__name__}") from None


def parse_config(text: str, base: TrainingConfig | None = None) -> TrainingConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigFileError(f"malformed config: {exc}") from None
    base = base or TrainingConfig()
    targets = {"model": base.model, "loss": base.loss, "train": base.train}
    unknown = set(parser.sections()) - set(targets)
    if unknown:
        raise ConfigFileError(f"unknown config sections: {sorted(unknown)}")
    updated = {}
    for section, obj in targets.items():
        known = {f.name: getattr(obj, f.name) for f in fields(obj)}
        values = {}
        if parser.has_section(section):
            for key, raw in parser.items(section):
                if key not in known:
                    raise ConfigFileError(f"unknown key {key!r} in [{section}]")
                values[key] = _coerce(section, key, raw, known[key])
        updated[section] = replace(obj, **values)
    cfg = TrainingConfig(updated["model"], updated["loss"], updated["train"])
    cfg.validate()
    return cfg


def load_config(path, base: TrainingConfig | None = None) -> TrainingConfig:
    return parse_config(Path(path).read_text(), base)
