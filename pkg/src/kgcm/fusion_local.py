"""Local fusion of structured features with step-aligned text.

Each time step embeds its structured row, queries the step's token vectors
through prompt-augmented cross-attention, and blends the two modalities with
a learned sigmoid gate. A squared-distance penalty keeps the two modality
prompts aligned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .numeric import (
    SeededRng,
    Tensor,
    add,
    concat,
    constant,
    linear,
    matmul,
    matmul_nt,
    mix,
    relu,
    scale,
    sigmoid,
    softmax_rows,
    stack_rows,
    sub,
    sum_sq,
    take_row,
    zeros,
)

log = logging.getLogger(__name__)

__all__ = ["LpoParams", "init_lpo_params", "embed_structured", "guided_cross_attention", "gated_fuse", "prompt_loss"]


@dataclass
class LpoParams:
    """Learnable pieces of the local fusion step.

    ``w_embed``/``b_embed`` always exist (the structured embedding); the
    attention and gate weights are None when local text fusion is disabled.
    """

    w_embed: Tensor  # (d, F)
    b_embed: Tensor  # (d,)
    prompt_struct: Tensor | None = None  # (d,)
    prompt_text: Tensor | None = None  # (d,)
    w_query: Tensor | None = None  # (d, d)
    w_key: Tensor | None = None  # (d, d)
    w_value: Tensor | None = None  # (d, d)
    w_gate: Tensor | None = None  # (d, 2d)

    @property
    def dim(self) -> int:
        return self.w_embed.data.shape[0]

    @property
    def has_text_fusion(self) -> bool:
        return self.prompt_struct is not None


def init_lpo_params(d: int, feature_count: int, rng: SeededRng, with_text: bool) -> LpoParams:
    """Glorot weights, zero biases, prompts from N(0, 0.02^2)."""
    params = LpoParams(
        w_embed=Tensor(rng.glorot(d, feature_count), requires_grad=True, name="lpo/w_embed"),
        b_embed=Tensor(np.zeros(d), requires_grad=True, name="lpo/b_embed"),
    )
    if with_text:
        params.prompt_struct = Tensor(rng.normal((d,), std=0.02), requires_grad=True, name="lpo/prompt_struct")
        params.prompt_text = Tensor(rng.normal((d,), std=0.02), requires_grad=True, name="lpo/prompt_text")
        params.w_query = Tensor(rng.glorot(d, d), requires_grad=True, name="lpo/w_query")
        params.w_key = Tensor(rng.glorot(d, d), requires_grad=True, name="lpo/w_key")
        params.w_value = Tensor(rng.glorot(d, d), requires_grad=True, name="lpo/w_value")
        params.w_gate = Tensor(rng.glorot(d, 2 * d), requires_grad=True, name="lpo/w_gate")
    return params


def embed_structured(x, params: LpoParams) -> Tensor:
    """ReLU(W x + b) for one structured input row."""
    vec = x if isinstance(x, Tensor) else constant(np.asarray(x, dtype=np.float64))
    if vec.data.shape != (params.w_embed.data.shape[1],):
        raise ShapeError(f"structured input has shape {vec.data.shape}, expected ({params.w_embed.data.shape[1]},)")
    return relu(linear(vec, params.w_embed, params.b_embed))


def embed_structured_rows(x: Tensor, params: LpoParams) -> Tensor:
    """Batched embedding of a (T, F) matrix of structured rows."""
    return relu(linear(x, params.w_embed, params.b_embed))


def guided_cross_attention(h_s: Tensor, tokens: np.ndarray, params: LpoParams) -> Tensor:
    """Attend from the structured query to the step's token rows.

    ``tokens`` is the (m, d) token matrix for this step. m = 0 is legal: the
    result is a zero vector and the event is logged, so sparsely annotated
    data still flows through.
    """
    d = params.dim
    if tokens.ndim != 2 or tokens.shape[1] != d:
        raise ShapeError(f"token matrix has shape {tokens.shape}, expected (m, {d})")
    if tokens.shape[0] == 0:
        log.debug("empty local text: cross-attention output is the zero vector")
        return zeros(d)
    tok = constant(tokens)
    q = add(linear(h_s, params.w_query), params.prompt_struct)
    k = add(linear(tok, params.w_key), params.prompt_text)
    v = linear(tok, params.w_value)
    scores = scale(matmul_nt(stack_rows([q]), k), 1.0 / math.sqrt(d))
    weights = softmax_rows(scores)
    return take_row(matmul(weights, v), 0)


def gated_fuse(h_s: Tensor, z: Tensor, params: LpoParams) -> tuple[Tensor, Tensor]:
    """sigmoid gate over [h_s; z], then the convex blend of the two."""
    if h_s.data.shape != z.data.shape:
        raise ShapeError(f"gate inputs disagree: {h_s.data.shape} vs {z.data.shape}")
    g = sigmoid(linear(concat([h_s, z]), params.w_gate))
    return g, mix(g, h_s, z)


def prompt_loss(params: LpoParams) -> Tensor:
    """Squared L2 distance between the two modality prompts."""
    return sum_sq(sub(params.prompt_struct, params.prompt_text))
