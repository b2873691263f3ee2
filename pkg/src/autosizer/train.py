"""Proximal-gradient training: Adam step on the data loss, then a group prox step."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .autosize import AutosizeScope, scope_to_groups
from .data import Batch, ParallelCorpus, batch_iterator
from .model import Transformer, label_smoothed_loss
from .prox import GroupSpec, Regularizer, RegKind, apply_prox, reg_value

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.98)
    adam_eps: float = 1e-9
    clip_norm: float = 0.1
    label_smoothing: float = 0.1
    lam: float = 0.0
    regularizer: str = "l21"
    scope: str = "ffn"
    max_tokens: int = 2048
    lr_decay: float = 0.5
    patience: int = 1
    lr_floor: float = 1e-5
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if not self.lam >= 0:
            raise ValueError("lam must be nonnegative")
        if not self.lr_floor < self.learning_rate:
            raise ValueError("lr_floor must be below the initial learning rate")
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must lie in (0, 1)")
        RegKind(self.regularizer)
        AutosizeScope(self.scope)

    @property
    def reg(self) -> Regularizer:
        return Regularizer(RegKind(self.regularizer), self.lam)


@dataclass
class Adam:
    """Adam with bias correction; moments keyed by parameter path."""

    params: dict[str, T.Tensor]
    betas: tuple[float, float] = (0.9, 0.98)
    eps: float = 1e-9
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for path, p in self.params.items():
            self.m.setdefault(path, np.zeros(p.shape))
            self.v.setdefault(path, np.zeros(p.shape))

    def step(self, lr: float) -> None:
        b1, b2 = self.betas
        self.step_count += 1
        c1 = 1 - b1 ** self.step_count
        c2 = 1 - b2 ** self.step_count
        for path, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self.m[path]
            v = self.v[path]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(params: Sequence[T.Tensor], max_norm: float) -> float:
    """Scale all gradients so their global l2 norm is at most ``max_norm``; returns the factor."""
    norm = T.parameters_grad_norm(params)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for p in params:
        if p.grad is not None:
            p.grad = p.grad * factor
    return factor


@dataclass
class StepMetrics:
    loss: float
    grad_norm: float
    clipped_norm: float
    zero_groups: int
    num_tokens: int


def regularizer_total(model: Transformer, specs: Sequence[GroupSpec], kind) -> float:
    return sum(reg_value(model.params[s.param_path], s, kind) for s in specs)


def train_step(
    model: Transformer,
    batch: Batch,
    config: TrainConfig,
    opt: Adam,
    lr: float,
    specs: Sequence[GroupSpec] | None = None,
) -> StepMetrics:
    """Forward, backward, clip, Adam update, then prox with threshold ``lr * lam``."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if specs is None:
        specs = scope_to_groups(model, config.scope)
    model.train()
    model.zero_grad()
    logits = model(batch.src, batch.tgt_in)
    loss = label_smoothed_loss(logits, batch.tgt_out, config.label_smoothing)
    if not math.isfinite(loss.item()):
        raise TrainingError(f"non-finite loss {loss.item()} at step {opt.step_count + 1}")
    T.backward(loss)
    params = model.parameters()
    grad_norm = T.parameters_grad_norm(params)
    clip_gradients(params, config.clip_norm)
    clipped = T.parameters_grad_norm(params)
    opt.step(lr)
    zeros = 0
    if specs:
        zeros = sum(apply_prox(model.params, specs, config.reg, lr).values())
    return StepMetrics(loss.item(), grad_norm, clipped, zeros, batch.num_tokens)


def evaluate_loss(model: Transformer, pairs, max_tokens: int, smoothing: float) -> tuple[float, float]:
    """Token-weighted mean loss and teacher-forced token accuracy."""
    model.eval()
    total = acc = count = 0.0
    with T.no_grad():
        for batch in batch_iterator(pairs, max_tokens):
            logits = model(batch.src, batch.tgt_in)
            n = batch.num_tokens
            total += label_smoothed_loss(logits, batch.tgt_out, smoothing).item() * n
            keep = batch.tgt_out != 0
            acc += float((logits.data.argmax(-1) == batch.tgt_out)[keep].sum())
            count += n
    return total / count, acc / count


@dataclass
class PlateauSchedule:
    """Multiply lr by ``decay`` after ``patience`` epochs without a new best; stop below ``floor``."""

    lr: float
    decay: float = 0.5
    patience: int = 1
    floor: float = 1e-5
    best: float = math.inf
    stale: int = 0

    def update(self, val_loss: float) -> float:
        if val_loss < self.best:
            self.best, self.stale = val_loss, 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.decay
                self.stale = 0
        return self.lr

    @property
    def done(self) -> bool:
        return self.lr < self.floor


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_loss: float
    val_acc: float
    lr: float
    zero_groups: int
    reg_value: float
    objective: float  # fixed validation batch loss + lam * reg_value

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def train_loop(
    model: Transformer,
    corpus: ParallelCorpus,
    config: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> list[EpochRecord]:
    """Train until the learning rate falls below ``lr_floor`` (or ``max_epochs``).

    The learning rate is multiplied by ``lr_decay`` whenever validation loss
    fails to improve for ``patience`` consecutive epochs.
    """
    train = corpus.splits.get("train") or []
    valid = corpus.splits.get("valid") or []
    if not train or not valid:
        raise ValueError("corpus needs non-empty train and valid splits")
    longest = max(max(len(s), len(t)) for s, t in train + valid) + 2
    if longest > model.config.max_positions:
        raise ValueError(f"sentences need {longest} positions; model has {model.config.max_positions}")
    specs = scope_to_groups(model, config.scope) if config.lam > 0 else []
    opt = Adam(model.params, config.betas, config.adam_eps)
    sched = PlateauSchedule(config.learning_rate, config.lr_decay, config.patience, config.lr_floor)
    probe = next(batch_iterator(valid, config.max_tokens))
    history: list[EpochRecord] = []
    kind = RegKind(config.regularizer)
    scoped = scope_to_groups(model, config.scope)
    for epoch in range(1, config.max_epochs + 1):
        total = tokens = 0.0
        zeros = 0
        lr = sched.lr
        for batch in batch_iterator(train, config.max_tokens, seed=config.seed * 100_003 + epoch):
            m = train_step(model, batch, config, opt, lr, specs)
            total += m.loss * m.num_tokens
            tokens += m.num_tokens
            zeros = m.zero_groups
        val_loss, val_acc = evaluate_loss(model, valid, config.max_tokens, config.label_smoothing)
        rv = regularizer_total(model, scoped, kind)
        with T.no_grad():
            probe_loss = label_smoothed_loss(model(probe.src, probe.tgt_in), probe.tgt_out,
                                             config.label_smoothing).item()
        rec = EpochRecord(epoch, total / tokens, val_loss, val_acc, lr, zeros, rv,
                          probe_loss + config.lam * rv)
        history.append(rec)
        log.info("epoch %d loss %.4f val_loss %.4f val_acc %.4f lr %.2e zero_groups %d",
                 epoch, rec.loss, val_loss, val_acc, lr, zeros)
        if on_epoch is not None:
            on_epoch(rec)
        sched.update(val_loss)
        if sched.done:
            break
    return history
