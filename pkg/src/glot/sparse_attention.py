"""Log-sparse self-attention: index sets, masks, layers, and pair counting.

Each query position p (1-based) attends to itself plus the positions at
power-of-two distances into the past, so one layer evaluates
O(log L) scores per row and a stack of ceil(log2 L) layers gives every
position a full causal receptive field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import Tensor


class DomainError(ValueError):
    """Position or length outside the valid domain."""


@dataclass(frozen=True)
class IndexSet:
    """Positions a query at 1-based position p may attend to."""
    position: int
    members: tuple[int, ...]


@dataclass
class LssaParams:
    """Query/key projections of one attention layer (no value projection)."""
    w_q: Tensor
    w_k: Tensor


class PairCounter:
    """Tallies (query, key) score evaluations per attention kind."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def add(self, kind: str, n: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(n)

    def total(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    def reset(self) -> None:
        self.counts.clear()


def log_index_set(p: int) -> IndexSet:
    """{p - 2^k : k = floor(log2 p) .. 0} plus p itself, dropping
    candidates below position 1."""
    if p < 1:
        raise DomainError(f"position must be >= 1, got {p}")
    members = {p}
    if p > 1:
        for k in range(int(math.log2(p)), -1, -1):
            q = p - 2 ** k
            if q >= 1:
                members.add(q)
    return IndexSet(position=p, members=tuple(sorted(members)))


def build_mask(length: int) -> np.ndarray:
    """Boolean LxL matrix; row p marks log_index_set(p+1) (0-based storage)."""
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    mask = np.zeros((length, length), dtype=bool)
    for p in range(1, length + 1):
        for q in log_index_set(p).members:
            mask[p - 1, q - 1] = True
    return mask


def causal_mask(length: int) -> np.ndarray:
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    return np.tril(np.ones((length, length), dtype=bool))


def full_mask(length: int) -> np.ndarray:
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    return np.ones((length, length), dtype=bool)


def count_attention_pairs(length: int, mode: str) -> int:
    """Exact score evaluations one attention layer performs at this length."""
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    if mode == "dense":
        return length * length
    if mode == "causal_dense":
        return length * (length + 1) // 2
    if mode == "logsparse":
        return sum(len(log_index_set(p).members) for p in range(1, length + 1))
    raise DomainError(f"unknown mode {mode!r}")


def lssa_layer(x: Tensor, params: LssaParams, mask: np.ndarray,
               counter: PairCounter | None = None,
               tag: str = "logsparse") -> Tensor:
    """One log-sparse attention layer.

    Scores come from learned Q/K projections scaled by sqrt(d_b); the raw
    input rows act as values, so the output row p is the softmax-weighted
    mean of x over its index set.
    """
    F, d_b = x.shape
    if mask.shape != (F, F):
        raise nc.ShapeError(f"mask {mask.shape} does not match length {F}")
    q = nc.matmul(x, params.w_q)
    k = nc.matmul(x, params.w_k)
    scores = nc.scale(nc.matmul(q, nc.transpose(k)), 1.0 / math.sqrt(d_b))
    alpha = nc.masked_softmax_rows(scores, mask)
    if counter is not None:
        counter.add(tag, int(mask.sum()))
    return nc.matmul(alpha, x)


def stacked_lssa(x: Tensor, layer_params: list[LssaParams], mask: np.ndarray,
                 counter: PairCounter | None = None) -> Tensor:
    """Sequential log-sparse layers; depth ceil(log2 F) makes the stacked
    receptive field fully causal."""
    if not layer_params:
        raise nc.ConfigError("stacked_lssa requires at least one layer")
    out = x
    for params in layer_params:
        out = lssa_layer(out, params, mask, counter=counter)
    return out


def default_depth(max_frames: int) -> int:
    return max(1, math.ceil(math.log2(max_frames))) if max_frames > 1 else 1


def mask_closure(mask: np.ndarray, n_compositions: int) -> np.ndarray:
    """Boolean reachability after composing the mask n times (n>=1)."""
    reach = mask.copy()
    for _ in range(n_compositions - 1):
        reach = (reach.astype(np.int64) @ mask.astype(np.int64)) > 0
    return reach
