"""Single-file binary checkpoints.

Layout (little-endian)::

    b"ASNMT\\0"            magic, 6 bytes
    u16                   format version
    u32                   metadata length in bytes
    metadata              UTF-8 JSON: config, vocab tokens, [path, shape] records, extra
    payload               float64 data of every record, in record order
    sha256                32-byte digest of everything above

The file size is ``header + metadata + 8 * num_parameters + 32``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import ModelConfig, Transformer, parameter_shapes
from .tensor import Tensor

MAGIC = b"ASNMT\0"
VERSION = 1
_HEAD = struct.Struct("<6sHI")
_DIGEST = 32


class CheckpointError(ValueError):
    """Raised for malformed, truncated or corrupted checkpoint files."""


def _metadata(config: ModelConfig, vocab_tokens: Sequence[str], shapes: dict, extra: dict | None) -> bytes:
    meta = {
        "config": config.to_dict(),
        "vocab": list(vocab_tokens),
        "params": [[path, list(shape)] for path, shape in shapes.items()],
        "extra": extra or {},
    }
    return json.dumps(meta, separators=(",", ":"), sort_keys=True).encode("utf-8")


def to_bytes(model: Transformer, vocab_tokens: Sequence[str], extra: dict | None = None) -> bytes:
    shapes = {p: t.shape for p, t in model.params.items()}
    meta = _metadata(model.config, vocab_tokens, shapes, extra)
    body = [_HEAD.pack(MAGIC, VERSION, len(meta)), meta]
    body += [np.ascontiguousarray(t.data, dtype="<f8").tobytes() for t in model.params.values()]
    blob = b"".join(body)
    return blob + hashlib.sha256(blob).digest()


def from_bytes(blob: bytes) -> tuple[Transformer, list[str], dict]:
    if len(blob) < _HEAD.size + _DIGEST:
        raise CheckpointError("file too short to be a checkpoint")
    magic, version, meta_len = _HEAD.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError("bad magic; not a checkpoint")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    body, digest = blob[:-_DIGEST], blob[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checksum mismatch; checkpoint is corrupted")
    start = _HEAD.size
    try:
        meta = json.loads(body[start:start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata: {exc}") from None
    config = ModelConfig.from_dict(meta["config"])
    offset = start + meta_len
    params = {}
    for path, shape in meta["params"]:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(body):
            raise CheckpointError(f"payload truncated at {path}")
        data = np.frombuffer(body, dtype="<f8", count=n, offset=offset).astype(np.float64).reshape(shape)
        params[path] = Tensor(data, requires_grad=True)
        offset = end
    if offset != len(body):
        raise CheckpointError("trailing bytes after payload")
    return Transformer(config, params=params), meta["vocab"], meta["extra"]


def save(path, model: Transformer, vocab_tokens: Sequence[str], extra: dict | None = None) -> int:
    """Write the checkpoint; returns its size in bytes."""
    blob = to_bytes(model, vocab_tokens, extra)
    Path(path).write_bytes(blob)
    return len(blob)


def load(path) -> tuple[Transformer, list[str], dict]:
    return from_bytes(Path(path).read_bytes())


def serialized_size(config: ModelConfig, vocab_tokens: Sequence[str], extra: dict | None = None) -> int:
    """Exact byte size of a checkpoint for ``config``, without building the model."""
    shapes = parameter_shapes(config)
    meta = _metadata(config, vocab_tokens, shapes, extra)
    n = sum(int(np.prod(s)) for s in shapes.values())
    return _HEAD.size + len(meta) + 8 * n + _DIGEST


def payload_size(model: Transformer) -> int:
    return 8 * model.num_parameters()
