"""Group regularizers (l2,1 and linf,1) and their exact proximal operators.

A group is one full row (``group_axis=0``) or one full column
(``group_axis=1``) of a parameter matrix.  Closed forms produce exact 0.0 for
groups below threshold; nothing here thresholds by an epsilon.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor


class RegKind(str, enum.Enum):
    L21 = "l21"
    LINF1 = "linf1"


@dataclass(frozen=True)
class GroupSpec:
    """Which slices of a registered matrix form regularization groups."""

    param_path: str
    group_axis: int
    group_count: int

    def __post_init__(self):
        if self.group_axis not in (0, 1):
            raise ValueError(f"group_axis must be 0 or 1, got {self.group_axis}")

    def check(self, shape: Sequence[int]) -> None:
        if len(shape) != 2 or shape[self.group_axis] != self.group_count:
            raise ValueError(
                f"{self.param_path}: shape {tuple(shape)} has no {self.group_count} groups "
                f"along axis {self.group_axis}"
            )


@dataclass(frozen=True)
class Regularizer:
    kind: RegKind
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if not self.lam >= 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


def _rows(W, spec: GroupSpec) -> np.ndarray:
    arr = W.data if isinstance(W, Tensor) else np.asarray(W, dtype=np.float64)
    spec.check(arr.shape)
    return arr if spec.group_axis == 0 else arr.T


def group_norms(W, spec: GroupSpec, kind: RegKind | str) -> np.ndarray:
    rows = _rows(W, spec)
    if RegKind(kind) is RegKind.L21:
        return np.sqrt(np.sum(rows * rows, axis=1))
    if rows.shape[1] == 0:
        return np.zeros(rows.shape[0])
    return np.max(np.abs(rows), axis=1)


def reg_value(W, spec: GroupSpec, kind: RegKind | str) -> float:
    """Unscaled regularizer: sum of group l2 norms (L21) or group max-abs (LINF1)."""
    return float(np.sum(group_norms(W, spec, kind)))


# ---------------------------------------------------------------- row-batched kernels


def prox_l21_rows(V: np.ndarray, t: float) -> np.ndarray:
    """Block soft-thresholding of every row of ``V``."""
    V = np.asarray(V, dtype=np.float64)
    if t == 0:
        return V.copy()
    norms = np.sqrt(np.sum(V * V, axis=1, keepdims=True))
    out = np.zeros_like(V)
    live = (norms > t)[:, 0]
    out[live] = V[live] * (1.0 - t / norms[live])
    return out


def project_l1_ball_rows(V: np.ndarray, z: float = 1.0) -> np.ndarray:
    """Euclidean projection of every row of ``V`` onto the l1 ball of radius ``z``.

    Sort-based: with ``u`` the absolute values sorted descending, the threshold
    is ``(sum(u[:rho]) - z) / rho`` for the largest ``rho`` with
    ``u[rho-1] > (sum(u[:rho]) - z) / rho``.  Equal sorted values need no
    tie-breaking; the threshold formula handles them.
    """
    if z <= 0:
        raise ValueError(f"radius must be positive, got {z}")
    V = np.asarray(V, dtype=np.float64)
    out = V.copy()
    absV = np.abs(V)
    outside = absV.sum(axis=1) > z
    if not outside.any():
        return out
    A = absV[outside]
    u = -np.sort(-A, axis=1)
    css = np.cumsum(u, axis=1)
    j = np.arange(1, A.shape[1] + 1)
    # j = 1 always qualifies; the clamp only matters when z is below rounding of u[0]
    rho = np.maximum(np.count_nonzero(u * j > css - z, axis=1), 1)
    theta = (css[np.arange(A.shape[0]), rho - 1] - z) / rho
    out[outside] = np.sign(V[outside]) * np.maximum(A - theta[:, None], 0.0)
    return out


def prox_linf1_rows(V: np.ndarray, t: float) -> np.ndarray:
    """Prox of ``t * max|.|`` per row via Moreau: ``v - t * P_{l1 ball}(v / t)``.

    ``t * P_1(v / t)`` is evaluated as ``P_t(v)`` (projection onto the radius-t
    ball), which is the same point without overflow for tiny ``t``.
    """
    V = np.asarray(V, dtype=np.float64)
    if t == 0:
        return V.copy()
    out = V - project_l1_ball_rows(V, t)
    # inside the dual ball the exact answer is 0; the subtraction above leaves rounding dust
    dead = np.abs(V).sum(axis=1) <= t
    out[dead] = 0.0
    return out


# ---------------------------------------------------------------- vector API


def prox_l21(group, t: float) -> np.ndarray:
    """argmin_w 1/2||v - w||^2 + t ||w||_2  =  v * max(0, 1 - t/||v||)."""
    if t < 0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    return prox_l21_rows(np.atleast_1d(group)[None, :], t)[0]


def project_l1_ball(v, z: float = 1.0) -> np.ndarray:
    return project_l1_ball_rows(np.atleast_1d(v)[None, :], z)[0]


def prox_linf1(group, t: float) -> np.ndarray:
    """argmin_w 1/2||v - w||^2 + t max_j |w_j|."""
    if t < 0:
        raise ValueError(f"threshold must be nonnegative, got {t}")
    return prox_linf1_rows(np.atleast_1d(group)[None, :], t)[0]


_ROW_PROX = {RegKind.L21: prox_l21_rows, RegKind.LINF1: prox_linf1_rows}


def prox_matrix(W: np.ndarray, spec: GroupSpec, kind: RegKind | str, t: float) -> np.ndarray:
    rows = _rows(W, spec)
    new = _ROW_PROX[RegKind(kind)](rows, t)
    return new if spec.group_axis == 0 else new.T


def zero_groups(W, spec: GroupSpec) -> np.ndarray:
    """Indices of groups whose entries are all exactly 0.0."""
    rows = _rows(W, spec)
    return np.flatnonzero(~np.any(rows != 0.0, axis=1))


def apply_prox(
    registry: Mapping[str, Tensor],
    specs: Sequence[GroupSpec],
    reg: Regularizer,
    eta: float,
) -> dict[str, int]:
    """Replace each listed matrix by its proximal image with threshold ``eta * lam``.

    Updates parameters in place and returns ``{param_path: zero_group_count}``
    ordered by path.
    """
    if eta <= 0:
        raise ValueError(f"step size must be positive, got {eta}")
    missing = [s.param_path for s in specs if s.param_path not in registry]
    if missing:
        raise KeyError(f"unresolved parameter path(s): {', '.join(missing)}")
    t = eta * reg.lam
    counts = {}
    for spec in sorted(specs, key=lambda s: s.param_path):
        p = registry[spec.param_path]
        if t > 0:
            p.data[...] = prox_matrix(p.data, spec, reg.kind, t)
        counts[spec.param_path] = int(zero_groups(p.data, spec).size)
    return counts
