"""Pre-norm Transformer encoder-decoder over a flat named-parameter registry.

Registry paths are stable strings such as ``encoder.layer0.ffn.W1``.  Widths
may be ragged after compaction: each FFN keeps its own hidden width and each
attention head its own query/key and value widths.  Attention input
projections carry no bias, so a zeroed row contributes exactly nothing.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD, BOS, EOS, UNK = 0, 1, 2, 3


@dataclass
class ModelConfig:
    num_layers: int = 6
    d_model: int = 512
    num_heads: int = 8
    d_ffn: int = 2048
    vocab_size: int = 35000
    max_positions: int = 256
    dropout: float = 0.1
    label_smoothing: float = 0.1
    ln_eps: float = 1e-5
    # ragged widths after compaction; absent keys fall back to d_ffn / d_model // num_heads
    ffn_widths: dict[str, int] = field(default_factory=dict)
    head_layouts: dict[str, list[list[int]]] = field(default_factory=dict)

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by num_heads={self.num_heads}")
        if self.d_ffn < 1:
            raise ValueError("d_ffn must be at least 1")
        if self.num_layers < 0:
            raise ValueError("num_layers must be nonnegative")
        self.head_layouts = {k: [list(map(int, h)) for h in v] for k, v in self.head_layouts.items()}
        self.ffn_widths = {k: int(v) for k, v in self.ffn_widths.items()}

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    def ffn_width(self, layer: str) -> int:
        return self.ffn_widths.get(layer, self.d_ffn)

    def head_layout(self, attn: str) -> list[list[int]]:
        """Per-head ``[qk_width, v_width]`` for the attention block at ``attn``."""
        return self.head_layouts.get(attn, [[self.head_dim, self.head_dim]] * self.num_heads)

    def layer_prefixes(self) -> list[str]:
        return [f"{side}.layer{i}" for side in ("encoder", "decoder") for i in range(self.num_layers)]

    def attention_paths(self) -> list[str]:
        paths = []
        for i in range(self.num_layers):
            paths.append(f"encoder.layer{i}.self_attn")
        for i in range(self.num_layers):
            paths += [f"decoder.layer{i}.self_attn", f"decoder.layer{i}.cross_attn"]
        return paths

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Registry layout in canonical order, derived from the config alone."""
    D, V = cfg.d_model, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {"src_embed": (V, D), "tgt_embed": (V, D)}

    def attn(path):
        layout = cfg.head_layout(path)
        qk = sum(h[0] for h in layout)
        v = sum(h[1] for h in layout)
        shapes[f"{path}.in_proj"] = (2 * qk + v, D)
        shapes[f"{path}.out_proj"] = (D, v)
        shapes[f"{path}.out_bias"] = (D,)

    def ln(path):
        shapes[f"{path}.gain"] = (D,)
        shapes[f"{path}.bias"] = (D,)

    def ffn(layer):
        w = cfg.ffn_width(layer)
        shapes[f"{layer}.ffn.W1"] = (w, D)
        shapes[f"{layer}.ffn.b1"] = (w,)
        shapes[f"{layer}.ffn.W2"] = (D, w)
        shapes[f"{layer}.ffn.b2"] = (D,)

    for i in range(cfg.num_layers):
        layer = f"encoder.layer{i}"
        ln(f"{layer}.ln_attn")
        attn(f"{layer}.self_attn")
        ln(f"{layer}.ln_ffn")
        ffn(layer)
    ln("encoder.final_ln")
    for i in range(cfg.num_layers):
        layer = f"decoder.layer{i}"
        ln(f"{layer}.ln_self")
        attn(f"{layer}.self_attn")
        ln(f"{layer}.ln_cross")
        attn(f"{layer}.cross_attn")
        ln(f"{layer}.ln_ffn")
        ffn(layer)
    ln("decoder.final_ln")
    shapes["output.W"] = (V, D)
    shapes["output.b"] = (V,)
    return shapes


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count of a model built from ``cfg``."""
    D, V, N = cfg.d_model, cfg.vocab_size, cfg.num_layers
    total = 3 * V * D + V  # two embedding tables, output projection + bias
    total += (5 * N + 2) * 2 * D  # 2 norms per encoder layer, 3 per decoder layer, 2 final
    for path in cfg.attention_paths():
        layout = cfg.head_layout(path)
        qk = sum(h[0] for h in layout)
        v = sum(h[1] for h in layout)
        total += (2 * qk + v) * D + D * v + D
    for layer in cfg.layer_prefixes():
        total += 2 * cfg.ffn_width(layer) * D + cfg.ffn_width(layer) + D
    return total


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((n, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def init_parameters(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Glorot-uniform matrices, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    D = cfg.d_model
    params = {}
    for path, shape in parameter_shapes(cfg).items():
        leaf = path.rsplit(".", 1)[-1]
        if leaf == "gain":
            data = np.ones(shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        elif leaf == "in_proj":
            # each of the Q, K, V blocks is a D x D map
            data = rng.uniform(-1, 1, shape) * math.sqrt(6.0 / (2 * D))
        else:
            data = rng.uniform(-1, 1, shape) * math.sqrt(6.0 / sum(shape))
        params[path] = Tensor(data, requires_grad=True)
    return params


def _attn_mask(key_pad: np.ndarray, tq: int, causal: bool) -> np.ndarray:
    """Additive mask [B, 1, Tq, Tk] with -inf at disallowed keys."""
    B, tk = key_pad.shape
    blocked = np.broadcast_to(key_pad[:, None, None, :], (B, 1, tq, tk))
    if causal:
        future = np.triu(np.ones((tq, tk), dtype=bool), k=1)
        blocked = blocked | future[None, None]
    return np.where(blocked, -np.inf, 0.0)


class Transformer:
    """Encoder-decoder with pre-norm residual sub-layers.

    ``params`` maps path strings to leaf tensors; every trainable array lives
    there exactly once.  Dropout draws from a generator seeded at construction.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = params if params is not None else init_parameters(config, seed)
        expected = parameter_shapes(config)
        if list(expected) != list(self.params):
            raise ValueError("parameter registry does not match the config layout")
        for path, shape in expected.items():
            if self.params[path].shape != shape:
                raise ValueError(f"{path}: expected shape {shape}, got {self.params[path].shape}")
        self.training = False
        self.rng = np.random.default_rng(seed + 1)
        self._pe = sinusoidal_positions(config.max_positions, config.d_model)

    # -------------------------------------------------------------- registry

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def train(self, mode: bool = True) -> "Transformer":
        self.training = mode
        return self

    def eval(self) -> "Transformer":
        return self.train(False)

    # -------------------------------------------------------------- blocks

    def _p(self, path: str) -> Tensor:
        return self.params[path]

    def _dropout(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.config.dropout, self.rng, self.training)

    def _ln(self, x: Tensor, path: str) -> Tensor:
        return T.layer_norm(x, self._p(f"{path}.gain"), self._p(f"{path}.bias"), self.config.ln_eps)

    def ffn(self, x: Tensor, layer: str) -> Tensor:
        """W2 relu(W1 x + b1) + b2, applied at every position independently."""
        p = f"{layer}.ffn"
        h = T.relu(T.linear(x, self._p(f"{p}.W1"), self._p(f"{p}.b1")))
        return T.linear(h, self._p(f"{p}.W2"), self._p(f"{p}.b2"))

    def attention(self, xq: Tensor, xkv: Tensor, path: str, mask: np.ndarray) -> Tensor:
        """Multi-head scaled dot-product attention.

        ``mask`` is additive, broadcastable to [B, H, Tq, Tk].  The score scale
        stays 1/sqrt(d_model / num_heads) regardless of pruned widths.
        """
        layout = self.config.head_layout(path)
        qk = sum(h[0] for h in layout)
        vw = sum(h[1] for h in layout)
        W = self._p(f"{path}.in_proj")
        if xq is xkv:
            q, k, v = T.split(T.linear(xq, W), [qk, qk, vw], axis=-1)
        else:
            Wq, Wkv = T.split(W, [qk, qk + vw], axis=0)
            q = T.linear(xq, Wq)
            k, v = T.split(T.linear(xkv, Wkv), [qk, vw], axis=-1)
        scale = 1.0 / math.sqrt(self.config.head_dim)
        B, tq, tk = xq.shape[0], xq.shape[1], xkv.shape[1]
        H = len(layout)
        uniform = all(h == layout[0] for h in layout)
        if uniform and layout[0][0] > 0 and layout[0][1] > 0:
            dk, dv = layout[0]
            qh = T.transpose(T.reshape(q, (B, tq, H, dk)), (0, 2, 1, 3))
            kh = T.transpose(T.reshape(k, (B, tk, H, dk)), (0, 2, 3, 1))
            vh = T.transpose(T.reshape(v, (B, tk, H, dv)), (0, 2, 1, 3))
            scores = T.add(T.scale(T.matmul(qh, kh), scale), mask)
            ctx = T.matmul(T.softmax(scores, axis=-1), vh)
            ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (B, tq, H * dv))
        else:
            qs = T.split(q, [h[0] for h in layout], axis=-1)
            ks = T.split(k, [h[0] for h in layout], axis=-1)
            vs = T.split(v, [h[1] for h in layout], axis=-1)
            heads = []
            for (dk, dv), qh, kh, vh in zip(layout, qs, ks, vs):
                if dv == 0:
                    continue
                # a head with no query/key width attends uniformly over allowed keys
                scores = T.add(T.scale(T.matmul(qh, T.transpose(kh, (0, 2, 1))), scale), mask[:, 0])
                heads.append(T.matmul(T.softmax(scores, axis=-1), vh))
            ctx = T.concat(heads, axis=-1) if heads else Tensor(np.zeros((B, tq, 0)))
        return T.linear(ctx, self._p(f"{path}.out_proj"), self._p(f"{path}.out_bias"))

    def _embed(self, ids: np.ndarray, table: str) -> Tensor:
        n = ids.shape[1]
        if n > self.config.max_positions:
            raise ValueError(f"sequence length {n} exceeds max_positions={self.config.max_positions}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise IndexError(f"token id out of range [0, {self.config.vocab_size})")
        x = T.scale(T.embedding(self._p(table), ids), math.sqrt(self.config.d_model))
        return self._dropout(T.add(x, self._pe[:n]))

    # -------------------------------------------------------------- stacks

    def encode(self, src: np.ndarray) -> Tensor:
        src = np.asarray(src)
        x = self._embed(src, "src_embed")
        mask = _attn_mask(src == PAD, src.shape[1], causal=False)
        for i in range(self.config.num_layers):
            layer = f"encoder.layer{i}"
            h = self._ln(x, f"{layer}.ln_attn")
            x = T.add(x, self._dropout(self.attention(h, h, f"{layer}.self_attn", mask)))
            h = self._ln(x, f"{layer}.ln_ffn")
            x = T.add(x, self._dropout(self.ffn(h, layer)))
        return self._ln(x, "encoder.final_ln")

    def decode(self, tgt_in: np.ndarray, memory: Tensor, src: np.ndarray) -> Tensor:
        tgt_in = np.asarray(tgt_in)
        src = np.asarray(src)
        x = self._embed(tgt_in, "tgt_embed")
        tq = tgt_in.shape[1]
        self_mask = _attn_mask(tgt_in == PAD, tq, causal=True)
        cross_mask = _attn_mask(src == PAD, tq, causal=False)
        for i in range(self.config.num_layers):
            layer = f"decoder.layer{i}"
            h = self._ln(x, f"{layer}.ln_self")
            x = T.add(x, self._dropout(self.attention(h, h, f"{layer}.self_attn", self_mask)))
            h = self._ln(x, f"{layer}.ln_cross")
            x = T.add(x, self._dropout(self.attention(h, memory, f"{layer}.cross_attn", cross_mask)))
            h = self._ln(x, f"{layer}.ln_ffn")
            x = T.add(x, self._dropout(self.ffn(h, layer)))
        x = self._ln(x, "decoder.final_ln")
        return T.linear(x, self._p("output.W"), self._p("output.b"))

    def forward(self, src: np.ndarray, tgt_in: np.ndarray) -> Tensor:
        """Teacher-forced logits [B, T, V]."""
        return self.decode(tgt_in, self.encode(src), src)

    __call__ = forward


def label_smoothed_loss(logits: Tensor, targets: np.ndarray, smoothing: float, pad_id: int = PAD) -> Tensor:
    """Mean over non-pad positions of -[(1-eps) log p(y) + eps * mean_v log p(v)]."""
    if not 0 <= smoothing < 1:
        raise ValueError(f"smoothing must be in [0, 1), got {smoothing}")
    targets = np.asarray(targets)
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ValueError("batch contains only padding")
    V = logits.shape[-1]
    weights = np.zeros(logits.shape)
    weights[keep] = smoothing / V
    idx = np.nonzero(keep)
    weights[idx + (targets[keep],)] += 1.0 - smoothing
    logp = T.log_softmax(logits, axis=-1)
    return T.scale(T.sum_(T.mul(logp, weights)), -1.0 / n)
