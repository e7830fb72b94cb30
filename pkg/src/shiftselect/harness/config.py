"""Run configuration and its TOML round trip."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from ..matching import DEFAULT_LAMBDA, TAU_INIT, TAU_MAX, TAU_MIN
from ..tokenselect import SELECTION_MODES
from ..tokenshift import MODES, ShiftPlan
from .optim import DECAYS


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    channels: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    text_layers: int = 4
    video_layers: int = 4
    select_layers: int = 2
    # data-dependent dims; 0 means "take from the training corpus"
    vocab_size: int = 0
    max_text_len: int = 0
    n_patches: int = 0
    patch_dim: int = 0
    max_frames: int = 0


@dataclass
class ShiftConfig:
    mode: str = "token_shift"
    layers: list[int] = field(default_factory=lambda: [3, 4])
    ratio: float = 0.25

    def plan(self) -> ShiftPlan:
        return ShiftPlan(self.mode, tuple(self.layers), self.ratio)


@dataclass
class SelectConfig:
    mode: str = "learned"
    k: int = 4
    epsilon: float = 0.05
    samples: int = 500
    # forward with the exact eval-time selection; gradient stays the perturbed estimate
    hard_forward: bool = True


@dataclass
class LossConfig:
    lam: float = DEFAULT_LAMBDA
    tau_init: float = TAU_INIT


@dataclass
class OptimConfig:
    lr_backbone: float = 1e-4
    lr_select: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    decay: str = "cosine"
    batch_size: int = 32
    steps: int = 2000

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_fraction * self.steps))


@dataclass
class DataConfig:
    train: str = "data/train"
    test: str = "data/test"


@dataclass
class EvalConfig:
    inverted_softmax: bool = False
    beta: float = 20.0
    every: int = 0
    batch_size: int = 64
    ks: list[int] = field(default_factory=lambda: [1, 5, 10])


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "RunConfig":
        m, o = self.model, self.optim
        positive = {
            "model.channels": m.channels,
            "model.heads": m.heads,
            "model.mlp_ratio": m.mlp_ratio,
            "model.text_layers": m.text_layers,
            "model.video_layers": m.video_layers,
            "optim.lr_backbone": o.lr_backbone,
            "optim.lr_select": o.lr_select,
            "optim.batch_size": o.batch_size,
            "optim.adam_eps": o.adam_eps,
            "select.k": self.select.k,
            "select.samples": self.select.samples,
            "eval.beta": self.eval.beta,
            "eval.batch_size": self.eval.batch_size,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        non_negative = {
            "model.select_layers": m.select_layers,
            "optim.steps": o.steps,
            "optim.weight_decay": o.weight_decay,
            "select.epsilon": self.select.epsilon,
            "loss.lam": self.loss.lam,
            "eval.every": self.eval.every,
        }
        for name, value in non_negative.items():
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value}")
        if m.channels % m.heads:
            raise ConfigError("model.channels must be divisible by model.heads")
        if m.channels % 2:
            raise ConfigError("model.channels must be even for importance scoring")
        if not 0 <= o.beta1 < 1 or not 0 <= o.beta2 < 1:
            raise ConfigError("Adam betas must lie in [0, 1)")
        if o.decay not in DECAYS:
            raise ConfigError(f"optim.decay must be one of {DECAYS}")
        if not 0 <= o.warmup_fraction <= 1:
            raise ConfigError("optim.warmup_fraction must lie in [0, 1]")
        if not TAU_MIN <= self.loss.tau_init <= TAU_MAX:
            raise ConfigError(f"loss.tau_init must lie in [{TAU_MIN:g}, {TAU_MAX:g}]")
        if self.shift.mode not in MODES:
            raise ConfigError(f"shift.mode must be one of {MODES}")
        if self.select.mode not in SELECTION_MODES:
            raise ConfigError(f"select.mode must be one of {SELECTION_MODES}")
        try:
            self.shift.plan().validate_depth(m.video_layers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    # -- serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        return _build(cls, raw, "")

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            raw = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.loads(text)

    def override(self, dotted: str, value: Any) -> "RunConfig":
        """Copy with one ``section.field`` replaced."""
        raw = self.to_dict()
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section in {dotted!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value
        return RunConfig.from_dict(raw)


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {where or '<root>'} must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in {where or '<root>'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}{name}.")
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}{name} must be a boolean")
            kwargs[name] = value
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}{name} must be a number")
            kwargs[name] = float(value)
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}{name} must be an integer")
            kwargs[name] = value
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{where}{name} must be a list")
            kwargs[name] = list(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)
