"""Codebook cross-attention hierarchy decoder.

Each level holds a learnable codebook whose codes act as queries into the
previous level's part features.  The softmax attention matrix doubles as a
soft parent-assignment adjacency; a straight-through pseudo one-hot turns
it into hard parent indices while keeping gradients on the soft rows.
Level 1 attends into the encoder grid; level 0 is a virtual root with
occupancy one everywhere, closing the containment recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ShapeError, Tensor, accumulate_grad, matmul, softmax_rows
from .encoder import FeatureGrid


@dataclass
class Codebook:
    """Learnable part codes for one hierarchy level, shared across shapes."""

    codes: Tensor
    level: int

    def __post_init__(self):
        if self.codes.ndim != 2 or self.codes.shape[0] < 1:
            raise ValueError(f"codebook must be (N, D) with N >= 1, got {self.codes.shape}")

    @property
    def cardinality(self) -> int:
        return self.codes.shape[0]


@dataclass
class LevelState:
    """Per-level decode products: features, soft adjacency, hard parents."""

    features: Tensor  # (N_l, D)
    attention: Tensor  # (N_l, N_prev), rows stochastic
    parent_index: np.ndarray  # (N_l,) argmax per row, lowest-index ties
    parent_onehot_st: Tensor  # (N_l, N_prev) straight-through pseudo one-hots

    @property
    def num_parts(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class DecoderConfig:
    parts_per_level: tuple[int, ...]
    latent_dim: int

    def __post_init__(self):
        if len(self.parts_per_level) < 1:
            raise ValueError("decoder needs at least one level")
        if any(n < 1 for n in self.parts_per_level):
            raise ValueError("parts per level must be strictly positive")

    @property
    def levels(self) -> int:
        return len(self.parts_per_level)

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.latent_dim)


# codes need enough spread that attention rows differ per part from the very
# first step; with tighter init all parts share one feature vector and the
# shared convex head can only move them in lockstep, which collapses training
CODEBOOK_INIT_STD = 2.0


def init_decoder_params(cfg: DecoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Codebooks (wide init) and per-level Q/K/V projections (std 1/sqrt(D))."""
    d = cfg.latent_dim
    std = 1.0 / np.sqrt(d)
    params: dict[str, Tensor] = {}
    for lvl, n in enumerate(cfg.parts_per_level, start=1):
        params[f"lvl{lvl}.codebook"] = Tensor(
            rng.normal(0.0, CODEBOOK_INIT_STD, (n, d)), requires_grad=True
        )
        for name in ("wq", "wk", "wv"):
            params[f"lvl{lvl}.{name}"] = Tensor(
                rng.normal(0.0, std, (d, d)), requires_grad=True
            )
    return params


def straight_through_rows(attention: Tensor) -> Tensor:
    """Row-wise hard one-hots at the argmax; backward is identity to the rows.

    Equivalent to A + stopgrad(onehot - A) but with the forward assembled
    directly, so the output is exactly one-hot in floating point.
    """
    arg = np.argmax(attention.data, axis=1)
    hard = np.zeros_like(attention.data)
    hard[np.arange(hard.shape[0]), arg] = 1.0

    def _bk(grad):
        accumulate_grad(attention, grad)

    return Tensor.from_op(hard, (attention,), _bk)


def straight_through_parent(attention_row: Tensor) -> Tensor:
    """Single-row straight-through estimator (lowest-index tie-break)."""
    if attention_row.ndim != 1:
        raise ShapeError(f"expected a 1-D attention row, got {attention_row.shape}")
    return straight_through_rows(attention_row.reshape(1, -1)).reshape(-1)


def attend_level(
    prev: Tensor, codebook: Codebook, wq: Tensor, wk: Tensor, wv: Tensor
) -> LevelState:
    """One cross-attention level: codes query the incoming part features."""
    if prev.ndim != 2 or prev.shape[0] < 1:
        raise ShapeError(f"previous-level features must be (N_prev, D), got {prev.shape}")
    d = wq.shape[0]
    q = matmul(codebook.codes, wq)
    k = matmul(prev, wk)
    v = matmul(prev, wv)
    logits = matmul(q, k.transpose()) * (1.0 / np.sqrt(d))
    attention = softmax_rows(logits)
    features = matmul(attention, v)
    parent_index = np.argmax(attention.data, axis=1)
    return LevelState(
        features=features,
        attention=attention,
        parent_index=parent_index,
        parent_onehot_st=straight_through_rows(attention),
    )


def decode_hierarchy(
    grid: FeatureGrid, cfg: DecoderConfig, params: dict[str, Tensor]
) -> list[LevelState]:
    """Run all levels; level 1 consumes the grid tokens, deeper levels the
    previous level's part features.  Output token count at each level equals
    the codebook cardinality, independent of the input token count."""
    if grid.latent_dim != cfg.latent_dim:
        raise ShapeError(
            f"grid latent dim {grid.latent_dim} != decoder latent dim {cfg.latent_dim}"
        )
    states: list[LevelState] = []
    prev = grid.features
    for lvl in range(1, cfg.levels + 1):
        cb = Codebook(params[f"lvl{lvl}.codebook"], lvl)
        state = attend_level(
            prev,
            cb,
            params[f"lvl{lvl}.wq"],
            params[f"lvl{lvl}.wk"],
            params[f"lvl{lvl}.wv"],
        )
        states.append(state)
        prev = state.features
    return states


def extract_tree(states: list[LevelState]) -> list[tuple[int, int, int]]:
    """(level, child_index, parent_index) edges; level-1 parts parent to the
    virtual root (index 0 at level 0)."""
    if not states:
        raise ValueError("cannot extract a tree from zero levels")
    edges: list[tuple[int, int, int]] = []
    for child in range(states[0].num_parts):
        edges.append((1, child, 0))
    for lvl, state in enumerate(states[1:], start=2):
        for child, parent in enumerate(state.parent_index):
            edges.append((lvl, child, int(parent)))
    return edges
