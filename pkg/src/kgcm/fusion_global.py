"""Shared-context injection and frozen relation-matrix weighting.

A pooled vector for the cross-region text is gated into every step's
representation, and the relation matrix frozen after the first training
stage reweights feature dimensions as a fixed linear operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numeric import SeededRng, Tensor, concat, constant, linear, matmul, mix, sigmoid
from .text import EncoderConfig, TextRecord, encode

__all__ = [
    "GlobalGateParams",
    "FrozenStructure",
    "init_global_gate",
    "encode_global_prompt",
    "conditional_gate",
    "acmfw_weight",
]


@dataclass
class GlobalGateParams:
    w_gate: Tensor  # (d, 2d)
    b_gate: Tensor  # (d,)


@dataclass(frozen=True)
class FrozenStructure:
    """Row-stochastic relation matrix snapshot, immutable after stage 1."""

    matrix: np.ndarray  # (d, d)
    provenance: str

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeError(f"frozen structure must be square, got shape {m.shape}")
        if not np.allclose(m.sum(axis=1), 1.0, atol=1e-9) or (m < 0).any():
            raise ShapeError("frozen structure must be row-stochastic")
        m.setflags(write=False)


def init_global_gate(d: int, rng: SeededRng) -> GlobalGateParams:
    return GlobalGateParams(
        w_gate=Tensor(rng.glorot(d, 2 * d), requires_grad=True, name="global/w_gate"),
        b_gate=Tensor(np.zeros(d), requires_grad=True, name="global/b_gate"),
    )


def encode_global_prompt(record: TextRecord, encoder: EncoderConfig) -> np.ndarray:
    """Pooled vector for the cross-region text (zero vector for empty text)."""
    return encode(record, encoder).pooled


def conditional_gate(h: Tensor, p_global: Tensor, params: GlobalGateParams) -> Tensor:
    """sigmoid(W [h; p] + b) gates h against the shared-context vector."""
    if h.data.shape != p_global.data.shape:
        raise ShapeError(f"gate inputs disagree: {h.data.shape} vs {p_global.data.shape}")
    g = sigmoid(linear(concat([h, p_global]), params.w_gate, params.b_gate))
    return mix(g, h, p_global)


def acmfw_weight(h: Tensor, structure: FrozenStructure) -> Tensor:
    """Reweight feature dimensions by the frozen relation matrix: A h."""
    d = structure.matrix.shape[0]
    if h.data.shape != (d,):
        raise ShapeError(f"vector has shape {h.data.shape}, expected ({d},)")
    return matmul(constant(structure.matrix), h)
