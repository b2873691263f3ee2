"""Human-editable run configuration (``key = value`` lines, ``#`` comments)."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .model import ModelConfig
from .train import TrainConfig


class ConfigError(ValueError):
    pass


# where each reference default comes from
DEFAULT_NOTES = {
    "num_layers": "reference: 6 + 6 layers",
    "d_model": "reference width",
    "num_heads": "reference head count",
    "d_ffn": "4 * d_model",
    "dropout": "reference value",
    "label_smoothing": "reference value",
    "clip_norm": "global norm, reference value",
    "learning_rate": "Adam, reference value",
    "lr_floor": "training ends when lr drops below this",
    "beam": "length-normalized beam",
    "lam": "shared by every regularized matrix",
}


@dataclass
class RunConfig:
    data: str = ""
    # model
    num_layers: int = 6
    d_model: int = 512
    num_heads: int = 8
    d_ffn: int = 2048
    max_positions: int = 256
    dropout: float = 0.1
    label_smoothing: float = 0.1
    # optimization
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    clip_norm: float = 0.1
    lam: float = 0.0
    regularizer: str = "l21"
    scope: str = "ffn"
    max_tokens: int = 2048
    lr_decay: float = 0.5
    patience: int = 1
    lr_floor: float = 1e-5
    max_epochs: int = 1000
    seed: int = 0
    # evaluation
    beam: int = 5
    alpha: float = 1.0

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            num_layers=self.num_layers, d_model=self.d_model, num_heads=self.num_heads,
            d_ffn=self.d_ffn, vocab_size=vocab_size, max_positions=self.max_positions,
            dropout=self.dropout, label_smoothing=self.label_smoothing,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, betas=(self.adam_beta1, self.adam_beta2),
            adam_eps=self.adam_eps, clip_norm=self.clip_norm, label_smoothing=self.label_smoothing,
            lam=self.lam, regularizer=self.regularizer, scope=self.scope, max_tokens=self.max_tokens,
            lr_decay=self.lr_decay, patience=self.patience, lr_floor=self.lr_floor,
            max_epochs=self.max_epochs, seed=self.seed,
        )


_FIELDS = {f.name: f for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for key, raw in parser["run"].items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        cast = _CASTS[str(_FIELDS[key].type)]
        try:
            values[key] = cast(raw.strip().strip('"'))
        except ValueError:
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    cfg = RunConfig(**values)
    try:
        cfg.train_config()
        cfg.model_config(vocab_size=8)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def load_config(path) -> RunConfig:
    cfg = parse_config(Path(path).read_text(encoding="utf-8"))
    if cfg.data and not Path(cfg.data).is_absolute():
        cfg = dataclasses.replace(cfg, data=str((Path(path).parent / cfg.data).resolve()))
    return cfg


def render_defaults() -> str:
    """Config keys, defaults and where each reference default comes from."""
    lines = []
    default = RunConfig()
    for name in _FIELDS:
        note = DEFAULT_NOTES.get(name)
        val = getattr(default, name)
        lines.append(f"  {name} = {val}" + (f"    # {note}" if note else ""))
    return "\n".join(lines)
