"""Structure-aware sequence encoder and multi-step forecast heads.

The encoder alternates two attention sublayers per block: standard attention
over the time axis, and attention over the feature axis whose pre-softmax
scores carry a log-damped structural bias built from the frozen relation
matrix. A position-wise feedforward with residual + layer norm closes each
block. The horizon is produced by independent linear heads over the pooled
encoder output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DataError, ShapeError
from .numeric import (
    SeededRng,
    Tensor,
    add,
    concat_cols,
    constant,
    gather_rows,
    layer_norm,
    linear,
    matmul,
    matmul_nt,
    matmul_tn,
    mean_rows,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    take_row,
)

__all__ = [
    "SsaBlockParams",
    "SsaParams",
    "init_ssa_params",
    "sinusoidal_positions",
    "embed_sequence",
    "structural_bias",
    "ssa_block",
    "forecast",
]


@dataclass
class SsaBlockParams:
    t_wq: Tensor
    t_wk: Tensor
    t_wv: Tensor
    t_wo: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ff_w1: Tensor  # (4d, d)
    ff_b1: Tensor
    ff_w2: Tensor  # (d, 4d)
    ff_b2: Tensor
    ln3_gamma: Tensor
    ln3_beta: Tensor
    # feature-axis attention; None when the structure-aware sublayer is off
    f_wq: Tensor | None = None
    f_wk: Tensor | None = None
    f_wv: Tensor | None = None
    f_wo: Tensor | None = None
    ln2_gamma: Tensor | None = None
    ln2_beta: Tensor | None = None

    @property
    def has_feature_attention(self) -> bool:
        return self.f_wq is not None


@dataclass
class SsaParams:
    tod_table: Tensor  # (S, d)
    dow_table: Tensor  # (7, d)
    blocks: list[SsaBlockParams]
    head_w: Tensor  # (T', d)
    head_b: Tensor  # (T',)
    heads: int = 1
    pooling: str = "last"


def init_ssa_params(
    d: int,
    horizon: int,
    blocks: int,
    day_slots: int,
    rng: SeededRng,
    with_feature_attention: bool,
    heads: int = 1,
    pooling: str = "last",
) -> SsaParams:
    if blocks < 1:
        raise ContractError(f"encoder needs at least one block, got {blocks}")
    if heads < 1 or d % heads != 0:
        raise ContractError(f"head count {heads} must divide model dimension {d}")
    if pooling not in ("last", "mean"):
        raise ContractError(f"pooling must be 'last' or 'mean', got {pooling!r}")
    block_list = []
    for i in range(blocks):
        p = SsaBlockParams(
            t_wq=Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/t_wq"),
            t_wk=Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/t_wk"),
            t_wv=Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/t_wv"),
            t_wo=Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/t_wo"),
            ln1_gamma=Tensor(np.ones(d), requires_grad=True, name=f"ssa/b{i}/ln1_gamma"),
            ln1_beta=Tensor(np.zeros(d), requires_grad=True, name=f"ssa/b{i}/ln1_beta"),
            ff_w1=Tensor(rng.glorot(4 * d, d), requires_grad=True, name=f"ssa/b{i}/ff_w1"),
            ff_b1=Tensor(np.zeros(4 * d), requires_grad=True, name=f"ssa/b{i}/ff_b1"),
            ff_w2=Tensor(rng.glorot(d, 4 * d), requires_grad=True, name=f"ssa/b{i}/ff_w2"),
            ff_b2=Tensor(np.zeros(d), requires_grad=True, name=f"ssa/b{i}/ff_b2"),
            ln3_gamma=Tensor(np.ones(d), requires_grad=True, name=f"ssa/b{i}/ln3_gamma"),
            ln3_beta=Tensor(np.zeros(d), requires_grad=True, name=f"ssa/b{i}/ln3_beta"),
        )
        if with_feature_attention:
            p.f_wq = Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/f_wq")
            p.f_wk = Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/f_wk")
            p.f_wv = Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/f_wv")
            p.f_wo = Tensor(rng.glorot(d, d), requires_grad=True, name=f"ssa/b{i}/f_wo")
            p.ln2_gamma = Tensor(np.ones(d), requires_grad=True, name=f"ssa/b{i}/ln2_gamma")
            p.ln2_beta = Tensor(np.zeros(d), requires_grad=True, name=f"ssa/b{i}/ln2_beta")
        block_list.append(p)
    return SsaParams(
        tod_table=Tensor(rng.normal((day_slots, d), std=0.02), requires_grad=True, name="ssa/tod_table"),
        dow_table=Tensor(rng.normal((7, d), std=0.02), requires_grad=True, name="ssa/dow_table"),
        blocks=block_list,
        head_w=Tensor(rng.glorot(horizon, d), requires_grad=True, name="ssa/head_w"),
        head_b=Tensor(np.zeros(horizon), requires_grad=True, name="ssa/head_b"),
        heads=heads,
        pooling=pooling,
    )


def sinusoidal_positions(length: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table: even columns sine, odd columns cosine."""
    pe = np.zeros((length, d), dtype=np.float64)
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(0, d, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, idx / d)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : pe[:, 1::2].shape[1]])
    return pe


def embed_sequence(h_seq: Tensor, slots: Sequence[int], dows: Sequence[int], params: SsaParams) -> Tensor:
    """Add time-of-day, day-of-week and positional encodings to the sequence."""
    t, d = h_seq.data.shape
    if len(slots) != t or len(dows) != t:
        raise ShapeError(f"timestamps cover {len(slots)} steps but the sequence has {t}")
    day_slots = params.tod_table.data.shape[0]
    for s in slots:
        if not 0 <= s < day_slots:
            raise DataError(f"time-of-day slot {s} outside table of size {day_slots}")
    for w in dows:
        if not 0 <= w < 7:
            raise DataError(f"day-of-week {w} outside 0..6")
    te = add(gather_rows(params.tod_table, slots), gather_rows(params.dow_table, dows))
    return add(add(h_seq, te), constant(sinusoidal_positions(t, d)))


def structural_bias(matrix: np.ndarray) -> np.ndarray:
    """Elementwise log(1 + A); rejects negative entries."""
    if (matrix < 0).any():
        raise ContractError("structural bias requires a nonnegative matrix")
    return np.log1p(matrix)


def _temporal_attention(x: Tensor, block: SsaBlockParams, heads: int) -> Tensor:
    d = x.data.shape[1]
    q = matmul(x, block.t_wq)
    k = matmul(x, block.t_wk)
    v = matmul(x, block.t_wv)
    head_dim = d // heads
    outs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = slice_cols(q, lo, hi) if heads > 1 else q
        kh = slice_cols(k, lo, hi) if heads > 1 else k
        vh = slice_cols(v, lo, hi) if heads > 1 else v
        weights = softmax_rows(scale(matmul_nt(qh, kh), 1.0 / math.sqrt(head_dim)))
        outs.append(matmul(weights, vh))
    merged = outs[0]
    for part in outs[1:]:
        merged = concat_cols(merged, part)
    return matmul(merged, block.t_wo)


def _feature_attention(x: Tensor, bias: np.ndarray | None, block: SsaBlockParams) -> Tensor:
    t = x.data.shape[0]
    q = matmul(x, block.f_wq)
    k = matmul(x, block.f_wk)
    v = matmul(x, block.f_wv)
    scores = scale(matmul_tn(q, k), 1.0 / math.sqrt(t))
    if bias is not None:
        scores = add(scores, constant(bias))
    weights = softmax_rows(scores)
    return matmul(matmul_nt(v, weights), block.f_wo)


def ssa_block(x: Tensor, bias: np.ndarray | None, block: SsaBlockParams, heads: int = 1) -> Tensor:
    """One encoder block: time attention, optional feature attention, feedforward.

    Each sublayer adds its input back and layer-normalizes. ``bias`` is added
    to the feature-axis scores before the softmax; passing None skips the
    addition (identical to an all-zero bias).
    """
    x = layer_norm(add(_temporal_attention(x, block, heads), x), block.ln1_gamma, block.ln1_beta)
    if block.has_feature_attention:
        x = layer_norm(add(_feature_attention(x, bias, block), x), block.ln2_gamma, block.ln2_beta)
    ff = linear(relu(linear(x, block.ff_w1, block.ff_b1)), block.ff_w2, block.ff_b2)
    return layer_norm(add(ff, x), block.ln3_gamma, block.ln3_beta)


def forecast(e: Tensor, bias: np.ndarray | None, params: SsaParams) -> Tensor:
    """Stack the encoder blocks, pool, and apply the per-horizon linear heads."""
    x = e
    for block in params.blocks:
        x = ssa_block(x, bias, block, params.heads)
    pooled = mean_rows(x) if params.pooling == "mean" else take_row(x, x.data.shape[0] - 1)
    return linear(pooled, params.head_w, params.head_b)
