"""Synthetic parallel corpora, vocabularies and token-budget batching."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .model import BOS, EOS, PAD, UNK

RESERVED = ("<pad>", "<s>", "</s>", "<unk>")
SPLITS = ("train", "valid", "test")
TASKS = ("copy", "reverse", "lexical-swap")


class Vocab:
    """Token <-> id bijection with pad=0, bos=1, eos=2, unk=3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"vocab must start with reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocab")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def synthetic(cls, size: int) -> "Vocab":
        if size <= len(RESERVED):
            raise ValueError(f"vocab size must exceed {len(RESERVED)}, got {size}")
        return cls(list(RESERVED) + [f"w{i}" for i in range(len(RESERVED), size)])

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, line: str) -> list[int]:
        return [self.index.get(t, UNK) for t in line.split()]

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


Pair = tuple[list[int], list[int]]


@dataclass
class ParallelCorpus:
    vocab: Vocab
    splits: dict[str, list[Pair]] = field(default_factory=dict)

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.vocab.tokens).encode())
        for name in sorted(self.splits):
            for s, t in self.splits[name]:
                h.update(f"{name}|{s}|{t}\n".encode())
        return h.hexdigest()

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.vocab.save(d / "vocab.txt")
        for name, pairs in self.splits.items():
            (d / f"{name}.src").write_text("".join(self.vocab.decode(s) + "\n" for s, _ in pairs), encoding="utf-8")
            (d / f"{name}.tgt").write_text("".join(self.vocab.decode(t) + "\n" for _, t in pairs), encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ParallelCorpus":
        d = Path(directory)
        vocab = Vocab.load(d / "vocab.txt")
        splits = {}
        for name in SPLITS:
            src, tgt = d / f"{name}.src", d / f"{name}.tgt"
            if not src.exists():
                continue
            s_lines = src.read_text(encoding="utf-8").splitlines()
            t_lines = tgt.read_text(encoding="utf-8").splitlines()
            if len(s_lines) != len(t_lines):
                raise ValueError(f"{name}: {len(s_lines)} source vs {len(t_lines)} target lines")
            splits[name] = [(vocab.encode(s), vocab.encode(t)) for s, t in zip(s_lines, t_lines)]
        return cls(vocab, splits)


def gen_task(
    kind: str,
    vocab_size: int,
    count: int,
    length_range: tuple[int, int] = (3, 8),
    seed: int = 0,
    heldout: int | None = None,
) -> ParallelCorpus:
    """Generate a toy translation task.

    ``count`` training pairs plus ``heldout`` (default count // 10, at least 1)
    pairs each for valid and test.  Source sentences are distinct across all
    splits, so the splits are disjoint.
    """
    if kind not in TASKS:
        raise ValueError(f"unknown task {kind!r}; expected one of {TASKS}")
    vocab = Vocab.synthetic(vocab_size)
    lo, hi = length_range
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {length_range}")
    if count < 1:
        raise ValueError("count must be positive")
    heldout = max(1, count // 10) if heldout is None else heldout
    total = count + 2 * heldout
    n_content = vocab_size - len(RESERVED)
    capacity = sum(n_content ** n for n in range(lo, hi + 1))
    if capacity < total:
        raise ValueError(f"only {capacity} distinct sentences exist for {total} requested")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_content) + len(RESERVED)

    seen: set[tuple[int, ...]] = set()
    sources: list[list[int]] = []
    while len(sources) < total:
        n = int(rng.integers(lo, hi + 1))
        s = tuple(int(x) for x in rng.integers(len(RESERVED), vocab_size, n))
        if s not in seen:
            seen.add(s)
            sources.append(list(s))

    def target(s):
        if kind == "copy":
            return list(s)
        if kind == "reverse":
            return s[::-1]
        return [int(perm[x - len(RESERVED)]) for x in s]

    pairs = [(s, target(s)) for s in sources]
    order = rng.permutation(total)
    pairs = [pairs[i] for i in order]
    splits = {
        "train": pairs[:count],
        "valid": pairs[count:count + heldout],
        "test": pairs[count + heldout:],
    }
    return ParallelCorpus(vocab, splits)


@dataclass
class Batch:
    src: np.ndarray  # [B, S] source ids + EOS, PAD-padded
    tgt_in: np.ndarray  # [B, T] BOS + target ids
    tgt_out: np.ndarray  # [B, T] target ids + EOS
    indices: np.ndarray  # positions in the originating pair list

    @property
    def num_tokens(self) -> int:
        return int((self.tgt_out != PAD).sum())

    def __len__(self) -> int:
        return len(self.indices)


def _pad(rows: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(r) for r in rows)
    out = np.full((len(rows), width), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def make_batch(pairs: Sequence[Pair], indices: Sequence[int]) -> Batch:
    src = [list(pairs[i][0]) + [EOS] for i in indices]
    tgt = [pairs[i][1] for i in indices]
    return Batch(
        src=_pad(src),
        tgt_in=_pad([[BOS] + list(t) for t in tgt]),
        tgt_out=_pad([list(t) + [EOS] for t in tgt]),
        indices=np.asarray(indices),
    )


def batch_iterator(pairs: Sequence[Pair], max_tokens: int, seed: int | None = None) -> Iterator[Batch]:
    """Length-bucketed padded batches, each within ``max_tokens`` padded target tokens.

    Pairs are sorted by length so batches hold similar lengths (little padding);
    the batch order is shuffled with ``seed`` (kept sorted when seed is None).
    """
    if not pairs:
        return iter(())
    longest = max(max(len(s), len(t)) for s, t in pairs) + 1
    if max_tokens < longest + 1:
        raise ValueError(f"max_tokens={max_tokens} cannot hold a sentence of length {longest - 1}")
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(pairs)) if seed is not None else np.arange(len(pairs))
    order = sorted(range(len(pairs)), key=lambda i: (len(pairs[i][1]), len(pairs[i][0]), tiebreak[i]))
    groups: list[list[int]] = []
    cur: list[int] = []
    width = 0
    for i in order:
        w = max(width, len(pairs[i][1]) + 1, len(pairs[i][0]) + 1)
        if cur and w * (len(cur) + 1) > max_tokens:
            groups.append(cur)
            cur, w = [], max(len(pairs[i][1]) + 1, len(pairs[i][0]) + 1)
        cur.append(i)
        width = w
    if cur:
        groups.append(cur)
    if seed is not None:
        groups = [groups[j] for j in rng.permutation(len(groups))]
    return (make_batch(pairs, g) for g in groups)
