"""Desk-scale regularization sweep: train, count dead FFN units, compact, score."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

from .autosize import detect_dead_groups, prune, scope_to_groups
from .data import gen_task
from .model import ModelConfig, Transformer
from .train import TrainConfig, train_loop


@dataclass
class SweepConfig:
    task: str = "lexical-swap"
    vocab_size: int = 64
    train_pairs: int = 10_000
    length_range: tuple[int, int] = (3, 8)
    num_layers: int = 2
    d_model: int = 32
    num_heads: int = 4
    d_ffn: int = 64
    dropout: float = 0.0
    learning_rate: float = 3e-3
    max_tokens: int = 64
    max_epochs: int = 10
    regularizer: str = "l21"
    scope: str = "ffn"
    lams: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)

    def model_config(self) -> ModelConfig:
        return ModelConfig(num_layers=self.num_layers, d_model=self.d_model, num_heads=self.num_heads,
                           d_ffn=self.d_ffn, vocab_size=self.vocab_size, max_positions=64, dropout=self.dropout)

    def train_config(self, lam: float, seed: int) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, lam=lam, regularizer=self.regularizer,
                           scope=self.scope, max_tokens=self.max_tokens, max_epochs=self.max_epochs, seed=seed)


@dataclass
class RunResult:
    seed: int
    lam: float
    val_acc: float
    dead_units: int
    total_units: int
    params_before: int
    params_after: int
    bytes_before: int
    bytes_after: int
    seconds: float
    epochs: int
    history: list[dict] = field(default_factory=list, repr=False)

    @property
    def pruned_fraction(self) -> float:
        return self.dead_units / self.total_units

    def record(self) -> str:
        keys = ("seed", "lam", "val_acc", "dead_units", "total_units", "params_before", "params_after",
                "bytes_before", "bytes_after", "seconds", "epochs")
        return " ".join(f"{k}={getattr(self, k):.6g}" if isinstance(getattr(self, k), float)
                        else f"{k}={getattr(self, k)}" for k in keys)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def run_one(cfg: SweepConfig, seed: int, lam: float, corpus=None) -> RunResult:
    if corpus is None:
        corpus = gen_task(cfg.task, cfg.vocab_size, cfg.train_pairs, cfg.length_range, seed=seed)
    model = Transformer(cfg.model_config(), seed=seed)
    start = time.perf_counter()
    history = train_loop(model, corpus, cfg.train_config(lam, seed))
    seconds = time.perf_counter() - start
    ffn = scope_to_groups(model, "ffn")
    dead = detect_dead_groups(model, ffn)
    _, rep = prune(model, corpus.vocab.tokens, ffn)
    return RunResult(
        seed=seed, lam=lam, val_acc=history[-1].val_acc,
        dead_units=sum(len(v) for v in dead.values()), total_units=sum(s.group_count for s in ffn),
        params_before=rep.params_before, params_after=rep.params_after,
        bytes_before=rep.bytes_before, bytes_after=rep.bytes_after,
        seconds=seconds, epochs=len(history), history=[asdict(h) for h in history],
    )


def run_seed(cfg: SweepConfig, seed: int, on_result=None) -> list[RunResult]:
    """The unregularized baseline followed by every swept strength, on one shared corpus."""
    corpus = gen_task(cfg.task, cfg.vocab_size, cfg.train_pairs, cfg.length_range, seed=seed)
    out = []
    for lam in (0.0, *cfg.lams):
        res = run_one(cfg, seed, lam, corpus)
        if on_result is not None:
            on_result(res)
        out.append(res)
    return out
