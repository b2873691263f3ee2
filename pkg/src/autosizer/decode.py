"""Beam search with length normalization, corpus BLEU and token accuracy."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import batch_iterator
from .model import BOS, EOS, PAD, Transformer


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished_at: int  # decoding step at which the hypothesis left the beam

    def score(self, alpha: float) -> float:
        return self.logprob / (len(self.tokens) ** alpha) if self.tokens else self.logprob


StepFn = Callable[[list[tuple[int, ...]]], np.ndarray]


def beam_search_core(step: StepFn, k: int, alpha: float, max_len: int, eos: int = EOS) -> list[Hypothesis]:
    """Generic beam search; returns all completed hypotheses, best first.

    ``step`` maps a list of prefixes to a [len(prefixes), V] array of next-token
    log-probabilities.  At every step the k best extensions by cumulative
    log-prob survive; extensions ending in ``eos`` leave the beam as finished.
    Hypotheses still live at ``max_len`` are finished unterminated.  Final
    ranking uses logprob / len**alpha, ties broken by earlier finish, then by
    lexicographic token order.
    """
    if k < 1:
        raise ValueError("beam width must be at least 1")
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    live = [Hypothesis((), 0.0, 0)]
    finished: list[Hypothesis] = []
    for t in range(1, max_len + 1):
        lp = np.asarray(step([h.tokens for h in live]), dtype=np.float64)
        cand = []
        for h, row in zip(live, lp):
            for v in np.flatnonzero(np.isfinite(row)):
                cand.append((h.logprob + row[v], h.tokens + (int(v),)))
        cand.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for logprob, toks in cand[:k]:
            hyp = Hypothesis(toks, float(logprob), t)
            (finished if toks[-1] == eos else live).append(hyp)
        if not live:
            break
    finished.extend(live)
    finished.sort(key=lambda h: (-h.score(alpha), h.finished_at, h.tokens))
    return finished


def model_step_fn(model: Transformer, source: Sequence[int]) -> StepFn:
    """Next-token log-probs for ``model`` given one source sentence (EOS appended)."""
    src = np.asarray([list(source) + [EOS]])
    with T.no_grad():
        model.eval()
        memory = model.encode(src)

    def step(prefixes):
        n = len(prefixes)
        tgt = np.asarray([[BOS, *p] for p in prefixes])
        with T.no_grad():
            mem = T.Tensor(np.broadcast_to(memory.data, (n,) + memory.shape[1:]))
            logits = model.decode(tgt, mem, np.repeat(src, n, axis=0))
            lp = T.log_softmax(T.Tensor(logits.data[:, -1]), axis=-1).data.copy()
        lp[:, [PAD, BOS]] = -np.inf
        return lp

    return step


def beam_search(model: Transformer, source: Sequence[int], k: int = 5, alpha: float = 1.0,
                max_len: int | None = None) -> list[int]:
    """Best target sequence for ``source`` (EOS stripped)."""
    if max_len is None:
        max_len = 2 * len(source) + 10
    max_len = min(max_len, model.config.max_positions - 1)
    best = beam_search_core(model_step_fn(model, source), k, alpha, max_len)[0]
    toks = list(best.tokens)
    return toks[:-1] if toks and toks[-1] == EOS else toks


def greedy(model: Transformer, source: Sequence[int], max_len: int | None = None) -> list[int]:
    if max_len is None:
        max_len = 2 * len(source) + 10
    step = model_step_fn(model, source)
    out: list[int] = []
    for _ in range(min(max_len, model.config.max_positions - 1)):
        nxt = int(np.argmax(step([tuple(out)])[0]))
        if nxt == EOS:
            break
        out.append(nxt)
    return out


def translate(model: Transformer, sources: Sequence[Sequence[int]], k: int = 5, alpha: float = 1.0) -> list[list[int]]:
    return [beam_search(model, s, k, alpha) for s in sources]


# ---------------------------------------------------------------- metrics


@dataclass
class BleuScore:
    precisions: list[float]  # p1..p4
    brevity_penalty: float
    score: float  # 0..100
    cand_len: int
    ref_len: int


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[str], references: Sequence[str], max_n: int = 4, smooth: bool = False) -> BleuScore:
    """Corpus BLEU on whitespace-tokenized, case-sensitive text.

    Clipped n-gram matches and candidate n-gram totals are pooled over the
    corpus; with ``smooth`` every precision becomes (matches+1)/(total+1).
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} references")
    if not candidates:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c, r = cand.split(), ref.split()
        c_len += len(c)
        r_len += len(r)
        for n in range(1, max_n + 1):
            cn, rn = _ngrams(c, n), _ngrams(r, n)
            matches[n - 1] += sum(min(cnt, rn[g]) for g, cnt in cn.items())
            totals[n - 1] += max(len(c) - n + 1, 0)
    if smooth:
        prec = [(m + 1) / (t + 1) for m, t in zip(matches, totals)]
    else:
        prec = [m / t if t else 0.0 for m, t in zip(matches, totals)]
    if c_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    if min(prec) == 0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in prec) / max_n)
    return BleuScore(prec, bp, score, c_len, r_len)


def token_accuracy(model: Transformer, pairs, max_tokens: int = 2048) -> float:
    """Teacher-forced fraction of non-pad target positions predicted by argmax."""
    model.eval()
    hit = total = 0
    with T.no_grad():
        for batch in batch_iterator(pairs, max_tokens):
            logits = model(batch.src, batch.tgt_in)
            keep = batch.tgt_out != PAD
            hit += int((logits.data.argmax(-1) == batch.tgt_out)[keep].sum())
            total += int(keep.sum())
    return hit / total if total else 0.0
