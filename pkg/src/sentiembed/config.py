"""Flat ``key = value`` run configuration with profile defaults.

Precedence is command-line overrides, then the file, then the profile.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .encoder import PROFILES as ENCODER_PROFILES
from .evaluation import FEWSHOT_PROFILES, FewShotConfig
from .objectives import HyperParams, LossSelection
from .trainer import TRAIN_PROFILES, TrainConfig

OUTPUT_ROOT_ENV = "SENTIEMBED_OUTPUT"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


@dataclass
class RunConfig:
    profile: str = "desk"
    dataset: str = ""
    lexicon: str = ""
    tokenizer_mode: str = "word"
    max_len: int = 128
    min_freq: int = 1
    mask_ratio: float = 0.1
    # encoder
    num_layers: int = 4
    hidden_dim: int = 128
    num_heads: int = 4
    dropout: float = 0.1
    # objective
    tau: float = 0.05
    alpha: float = 1.0
    lambda_w: float = 0.15
    use_word_loss: bool = True
    use_pos_loss: bool = True
    use_neg_loss: bool = True
    # training
    learning_rate: float = 3e-4
    batch_size: int = 16
    max_steps: int = 1000
    eval_interval: int = 50
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    keep_checkpoints: str = "best"
    valid_fraction: float = 0.1
    # few-shot
    fewshot_learning_rate: float = 1e-4
    fewshot_batch_size: int = 16
    fewshot_epochs: int = 100
    fewshot_eval_steps: int = 20
    fewshot_patience: int = 5
    fewshot_val_size: int = 500
    seed: int = 0
    num_threads: int = 1
    output_dir: str = ""

    @classmethod
    def profile_defaults(cls, profile: str) -> dict:
        if profile not in ENCODER_PROFILES:
            raise ConfigError("profile", f"unknown profile {profile!r} (choose from {sorted(ENCODER_PROFILES)})")
        out = {"profile": profile, **ENCODER_PROFILES[profile], **TRAIN_PROFILES[profile]}
        fs = dataclasses.replace(FewShotConfig(), **FEWSHOT_PROFILES[profile])
        out["fewshot_learning_rate"] = fs.learning_rate
        return out

    @classmethod
    def resolve(cls, file_values: Mapping[str, str] | None = None,
                overrides: Mapping[str, str] | None = None) -> "RunConfig":
        merged = {**(file_values or {}), **(overrides or {})}
        profile = merged.get("profile", "desk")
        values = cls.profile_defaults(profile)
        known = {f.name: f for f in fields(cls)}
        for key, raw in merged.items():
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
            values[key] = _coerce(key, known[key].type, raw)
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self, check_paths: bool = False) -> None:
        if self.tokenizer_mode not in ("word", "subword"):
            raise ConfigError("tokenizer_mode", "must be 'word' or 'subword'")
        if not 0 < self.mask_ratio <= 1:
            raise ConfigError("mask_ratio", "must lie in (0, 1]")
        if self.hidden_dim % self.num_heads:
            raise ConfigError("num_heads", f"must divide hidden_dim {self.hidden_dim}")
        if not 0 < self.valid_fraction < 1:
            raise ConfigError("valid_fraction", "must lie in (0, 1)")
        for key in ("tau", "learning_rate"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "must be positive")
        for key in ("alpha", "lambda_w", "weight_decay"):
            if getattr(self, key) < 0:
                raise ConfigError(key, "must be non-negative")
        if not (self.use_pos_loss or self.use_neg_loss):
            raise ConfigError("use_pos_loss", "at least one of use_pos_loss/use_neg_loss must be true")
        if check_paths:
            for key in ("dataset", "lexicon"):
                value = getattr(self, key)
                if not value:
                    raise ConfigError(key, "required")
                if not Path(value).exists():
                    raise ConfigError(key, f"path does not exist: {value}")

    def hyperparams(self) -> HyperParams:
        return HyperParams(tau=self.tau, alpha=self.alpha, lambda_w=self.lambda_w)

    def loss_selection(self) -> LossSelection:
        return LossSelection(self.use_word_loss, self.use_pos_loss, self.use_neg_loss)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                           max_steps=self.max_steps, eval_interval=self.eval_interval, seed=self.seed,
                           output_dir=self.output_dir or str(default_output_root() / "pretrain"),
                           weight_decay=self.weight_decay, grad_clip=self.grad_clip,
                           mask_ratio=self.mask_ratio, keep_checkpoints=self.keep_checkpoints)

    def fewshot_config(self) -> FewShotConfig:
        return FewShotConfig(batch_size=self.fewshot_batch_size, learning_rate=self.fewshot_learning_rate,
                             epochs=self.fewshot_epochs, eval_steps=self.fewshot_eval_steps,
                             weight_decay=self.weight_decay, patience=self.fewshot_patience,
                             val_size=self.fewshot_val_size)

    def encoder_overrides(self) -> dict:
        return dict(num_layers=self.num_layers, hidden_dim=self.hidden_dim, num_heads=self.num_heads,
                    dropout=self.dropout)

    def dump(self, path: str | Path) -> None:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(key: str, typ, raw):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ == "int":
            return int(raw.replace("_", ""))
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"expected {typ}, got {raw!r}") from None
    return raw


def parse_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(item, "override must be key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
