"""Auto-sizing scopes, dead-group detection and structural compaction.

Group geometry:

* FFN: each row of ``W1`` is one ReLU unit.  Deleting it removes that row, the
  matching entry of ``b1`` and the matching column of ``W2``; the constant the
  unit still emitted, ``W2[:, i] * relu(b1[i])``, is folded into ``b2``.
* Attention: each row of the bias-free input projection is one group.  A dead
  query or key row zeroes one term of every dot product, so the query/key pair
  at that index is deleted together.  A dead value row deletes itself and the
  paired column of the output projection.
"""
from __future__ import annotations

import copy
import enum
import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import checkpoint
from .model import ModelConfig, Transformer
from .prox import GroupSpec, zero_groups
from .tensor import Tensor


class AutosizeScope(str, enum.Enum):
    ALL = "all"
    ENCODER = "encoder"
    FFN = "ffn"


def scope_to_groups(model_or_config, scope: AutosizeScope | str) -> list[GroupSpec]:
    """Regularized matrices for a scope; embeddings and the output layer never appear."""
    cfg = model_or_config.config if isinstance(model_or_config, Transformer) else model_or_config
    scope = AutosizeScope(scope)
    specs = []
    for layer in cfg.layer_prefixes():
        if scope is AutosizeScope.ENCODER and not layer.startswith("encoder."):
            continue
        if scope is not AutosizeScope.FFN:
            attn = ["self_attn"] if layer.startswith("encoder.") else ["self_attn", "cross_attn"]
            for name in attn:
                layout = cfg.head_layout(f"{layer}.{name}")
                rows = 2 * sum(h[0] for h in layout) + sum(h[1] for h in layout)
                specs.append(GroupSpec(f"{layer}.{name}.in_proj", 0, rows))
        specs.append(GroupSpec(f"{layer}.ffn.W1", 0, cfg.ffn_width(layer)))
    return specs


def all_groups(model_or_config) -> list[GroupSpec]:
    return scope_to_groups(model_or_config, AutosizeScope.ALL)


def detect_dead_groups(model: Transformer, specs: Sequence[GroupSpec]) -> dict[str, list[int]]:
    """Sorted indices of groups whose entries are all exactly 0.0, per matrix."""
    return {s.param_path: zero_groups(model.params[s.param_path], s).tolist() for s in specs}


def zero_small_groups(model: Transformer, specs: Sequence[GroupSpec], epsilon: float) -> int:
    """Set groups with max-abs entry below ``epsilon`` to exact zero; returns how many."""
    hit = 0
    if epsilon <= 0:
        return hit
    for s in specs:
        W = model.params[s.param_path].data
        rows = W if s.group_axis == 0 else W.T
        small = np.abs(rows).max(axis=1, initial=0.0) < epsilon
        small &= np.any(rows != 0.0, axis=1)
        rows[small] = 0.0
        hit += int(small.sum())
    return hit


# ---------------------------------------------------------------- compaction


def _ffn_layer(path: str) -> str:
    return path[: -len(".ffn.W1")]


def _attn_units(layout: list[list[int]], rows: Sequence[int]) -> tuple[set[int], set[int]]:
    """Map dead in_proj rows to deleted query/key units and value units."""
    qk = sum(h[0] for h in layout)
    pair, value = set(), set()
    for r in rows:
        if r < 2 * qk:
            pair.add(r % qk)
        else:
            value.add(r - 2 * qk)
    return pair, value


def _shrink_layout(widths: list[int], removed: set[int]) -> list[int]:
    out, start = [], 0
    for w in widths:
        out.append(w - sum(1 for u in removed if start <= u < start + w))
        start += w
    return out


def removed_parameters(config: ModelConfig, dead: Mapping[str, Sequence[int]]) -> int:
    """Closed-form count of parameters ``compact`` deletes.

    FFN unit: D (row of W1) + 1 (bias) + D (column of W2).  Attention
    query/key unit: 2D (one row each).  Attention value unit: D (row) + D
    (output-projection column).
    """
    D = config.d_model
    total = 0
    for path, rows in dead.items():
        if path.endswith(".ffn.W1"):
            total += len(rows) * (2 * D + 1)
        elif path.endswith(".in_proj"):
            pair, value = _attn_units(config.head_layout(path[: -len(".in_proj")]), rows)
            total += 2 * D * len(pair) + 2 * D * len(value)
        else:
            raise ValueError(f"{path} is not a groupable matrix")
    return total


def compact(model: Transformer, dead: Mapping[str, Sequence[int]]) -> Transformer:
    """Return a smaller model with the listed dead groups physically removed.

    The new model computes the same function as ``model`` up to floating-point
    reassociation.  Raises ``IndexError`` for out-of-range indices and
    ``ValueError`` if a listed group is not exactly zero.
    """
    cfg = copy.deepcopy(model.config)
    data = {p: t.data.copy() for p, t in model.params.items()}
    for path, rows in dead.items():
        if path not in data:
            raise KeyError(f"unknown parameter path {path}")
        rows = sorted(set(int(r) for r in rows))
        if not rows:
            continue
        W = data[path]
        if rows[0] < 0 or rows[-1] >= W.shape[0]:
            raise IndexError(f"{path}: group index out of range [0, {W.shape[0]})")
        if np.any(W[rows] != 0.0):
            bad = [r for r in rows if np.any(W[r] != 0.0)]
            raise ValueError(f"{path}: groups {bad} are not exactly zero")
        keep = np.setdiff1d(np.arange(W.shape[0]), rows)
        if path.endswith(".ffn.W1"):
            layer = _ffn_layer(path)
            b1, W2, b2 = (f"{layer}.ffn.{n}" for n in ("b1", "W2", "b2"))
            data[b2] = data[b2] + data[W2][:, rows] @ np.maximum(data[b1][rows], 0.0)
            data[path] = W[keep]
            data[b1] = data[b1][keep]
            data[W2] = data[W2][:, keep]
            cfg.ffn_widths[layer] = int(keep.size)
        elif path.endswith(".in_proj"):
            attn = path[: -len(".in_proj")]
            layout = cfg.head_layout(attn)
            qk = sum(h[0] for h in layout)
            pair, value = _attn_units(layout, rows)
            keep_qk = [u for u in range(qk) if u not in pair]
            keep_v = [u for u in range(sum(h[1] for h in layout)) if u not in value]
            keep_rows = keep_qk + [qk + u for u in keep_qk] + [2 * qk + u for u in keep_v]
            data[path] = W[keep_rows]
            out = f"{attn}.out_proj"
            data[out] = data[out][:, keep_v]
            new_qk = _shrink_layout([h[0] for h in layout], pair)
            new_v = _shrink_layout([h[1] for h in layout], value)
            cfg.head_layouts[attn] = [[a, b] for a, b in zip(new_qk, new_v)]
        else:
            raise ValueError(f"{path} is not a groupable matrix")
    params = {p: Tensor(a, requires_grad=True) for p, a in data.items()}
    new = Transformer(cfg, params=params)
    new.rng = copy.deepcopy(model.rng)
    return new


# ---------------------------------------------------------------- reporting


@dataclass
class PruneReport:
    groups: dict[str, tuple[int, int]]  # path -> (total groups, zero groups)
    params_before: int
    params_after: int
    bytes_before: int
    bytes_after: int
    metrics: dict[str, float] = field(default_factory=dict)

    @property
    def zero_groups(self) -> int:
        return sum(z for _, z in self.groups.values())

    @property
    def total_groups(self) -> int:
        return sum(t for t, _ in self.groups.values())

    def records(self) -> list[str]:
        lines = [f"matrix={p} groups={t} zero={z}" for p, (t, z) in self.groups.items()]
        reduction = 1.0 - self.params_after / self.params_before
        lines.append(
            f"params_before={self.params_before} params_after={self.params_after} "
            f"bytes_before={self.bytes_before} bytes_after={self.bytes_after} "
            f"param_reduction={reduction:.6f}"
        )
        if self.metrics:
            lines.append(" ".join(f"{k}={v}" for k, v in self.metrics.items()))
        return lines


def prune(
    model: Transformer,
    vocab_tokens: Sequence[str],
    specs: Sequence[GroupSpec] | None = None,
    epsilon: float = 0.0,
) -> tuple[Transformer, PruneReport]:
    """Detect dead groups (optionally zeroing near-dead ones first) and compact."""
    specs = list(specs) if specs is not None else all_groups(model)
    bytes_before = checkpoint.serialized_size(model.config, vocab_tokens)
    params_before = model.num_parameters()
    if epsilon > 0:
        model = Transformer(copy.deepcopy(model.config),
                            params={p: Tensor(t.data.copy(), requires_grad=True) for p, t in model.params.items()})
        zero_small_groups(model, specs, epsilon)
    dead = detect_dead_groups(model, specs)
    groups = {s.param_path: (s.group_count, len(dead[s.param_path])) for s in specs}
    new = compact(model, dead)
    report = PruneReport(
        groups=groups,
        params_before=params_before,
        params_after=new.num_parameters(),
        bytes_before=bytes_before,
        bytes_after=checkpoint.serialized_size(new.config, vocab_tokens),
    )
    return new, report


@dataclass
class SystemRow:
    """One line of the size/quality comparison table."""

    system: str
    disk_bytes: int
    num_parameters: int
    metrics: dict[str, float] = field(default_factory=dict)


def _human(n: float, base: float, suffixes=("", "K", "M", "G")) -> str:
    i = 0
    while n >= base and i < len(suffixes) - 1:
        n /= base
        i += 1
    return f"{n:.0f}{suffixes[i]}" if i == 0 else f"{n:.1f}{suffixes[i]}"


def render_table(rows: Sequence[SystemRow], metric_names: Sequence[str] | None = None) -> str:
    """Aligned plain-text table: System | Disk Size | Number of Parameters | metrics..."""
    if metric_names is None:
        metric_names = []
        for r in rows:
            metric_names += [m for m in r.metrics if m not in metric_names]
    header = ["System", "Disk Size", "Number of Parameters", *metric_names]
    body = []
    for r in rows:
        cells = [r.system, _human(r.disk_bytes, 1024), _human(r.num_parameters, 1000)]
        cells += [f"{r.metrics[m]:.1f}" if m in r.metrics else "-" for m in metric_names]
        body.append(cells)
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]

    def line(cells):
        return " | ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), sep, *(line(c) for c in body)])


def _key(name: str) -> str:
    return re.sub(r"[^0-9a-zA-Z]+", "_", name.replace("%", "_pct")).strip("_").lower()


def render_records(rows: Sequence[SystemRow]) -> str:
    out = []
    for r in rows:
        fields = [f"system={r.system.replace(' ', '_')}", f"disk_bytes={r.disk_bytes}", f"num_parameters={r.num_parameters}"]
        fields += [f"{_key(k)}={v:.6g}" for k, v in r.metrics.items()]
        out.append(" ".join(fields))
    return "\n".join(out)


def report(before: SystemRow, after: Sequence[SystemRow]) -> str:
    """Table plus key=value records, with the relative reduction per row."""
    rows = [before, *after]
    for r in rows:
        r.metrics.setdefault("param_reduction_pct", 100.0 * (1 - r.num_parameters / before.num_parameters))
    return render_table(rows) + "\n\n" + render_records(rows)
