"""Model assembly: configuration, parameter registry, and window forwards.

A model is a set of component toggles over one shared parameter pool. The
five optional components follow the cumulative ablation order: feature-axis
attention with structural bias (ssa), the shared-context gate (rcpg), the
adaptive relation graph (dgso), frozen-matrix feature weighting (acmfw), and
local text cross-attention (lpo). With everything disabled the model is the
backbone: structured embedding, temporal-only encoder, forecast heads.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError
from .fusion_global import GlobalGateParams, init_global_gate
from .fusion_local import (
    LpoParams,
    embed_structured_rows,
    gated_fuse,
    guided_cross_attention,
    init_lpo_params,
    prompt_loss,
)
from .graph import DgsoParams, init_dgso_params, run_dgso, uniform_matrix
from .numeric import (
    SeededRng,
    Tensor,
    add,
    concat_cols,
    constant,
    history_columns,
    linear,
    matmul_nt,
    mean_rows,
    mix,
    scale,
    sigmoid,
    sse,
    stack_rows,
    take_row,
    zeros,
)
from .predictor import SsaParams, embed_sequence, forecast, init_ssa_params, structural_bias

log = logging.getLogger(__name__)

__all__ = [
    "COMPONENT_ORDER",
    "ALL_COMPONENTS",
    "TrainConfig",
    "SeriesWindow",
    "Model",
    "build_model",
    "build_backbone",
    "joint_loss",
]

COMPONENT_ORDER = ("ssa", "rcpg", "dgso", "acmfw", "lpo")
ALL_COMPONENTS = frozenset(COMPONENT_ORDER)


@dataclass
class TrainConfig:
    """Model dimensions and optimization settings with validated defaults."""

    d: int = 32
    n: int = 8
    n_prime: int = 0  # 0 means "same as n"
    layers: int = 2
    window: int = 48
    horizon: int = 12
    blocks: int = 2
    heads: int = 1
    day_slots: int = 48
    pooling: str = "last"
    lr: float = 1e-3
    lambda_prompt: float = 0.1
    ema_lambda: float = 0.9
    clip_norm: float = 5.0
    epochs_stage1: int = 100
    epochs_stage2: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.validate()

    @property
    def projection_width(self) -> int:
        return self.n_prime if self.n_prime > 0 else self.n

    def validate(self) -> None:
        for name in ("d", "layers", "window", "horizon", "blocks", "heads", "day_slots", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n < 2:
            raise ConfigError(f"n must be >= 2 (layer norm over one history point is degenerate), got {self.n}")
        if self.n_prime < 0:
            raise ConfigError(f"n_prime must be >= 0, got {self.n_prime}")
        if self.epochs_stage1 < 1 or self.epochs_stage2 < 1:
            raise ConfigError("at least one epoch per stage is required")
        if not 0.0 <= self.ema_lambda <= 1.0:
            raise ConfigError(f"ema_lambda must lie in [0, 1], got {self.ema_lambda}")
        if self.lambda_prompt < 0.0:
            raise ConfigError(f"lambda_prompt must be >= 0, got {self.lambda_prompt}")
        if self.lr <= 0.0 or self.clip_norm <= 0.0:
            raise ConfigError("lr and clip_norm must be positive")
        if self.d % self.heads != 0:
            raise ConfigError(f"heads {self.heads} must divide d {self.d}")
        if self.pooling not in ("last", "mean"):
            raise ConfigError(f"pooling must be 'last' or 'mean', got {self.pooling!r}")

    def scaled(self, **overrides) -> "TrainConfig":
        return replace(self, **overrides)


@dataclass
class SeriesWindow:
    """One training sample: inputs, timestamps, texts, and horizon targets."""

    region: str
    inputs: np.ndarray  # (T, F) raw feature rows
    targets: np.ndarray  # (T',) raw demand
    slots: list[int]  # time-of-day slot per input step
    dows: list[int]  # day-of-week per input step
    local_tokens: list[np.ndarray]  # per step token matrix (m_t, d)
    global_pooled: np.ndarray  # (d,) pooled shared-context vector
    start_index: int = 0
    target_times: list = field(default_factory=list)


@dataclass
class ForwardResult:
    predictions: Tensor | None  # (T',) on the scaled target scale
    prompt_term: Tensor | None
    aux_prediction: Tensor | None  # (1,) stage-1 head output
    final_matrices: list[np.ndarray] | None
    pad_count: int = 0


class Model:
    """Parameter pool plus the component-gated forward passes."""

    def __init__(self, config: TrainConfig, components: frozenset[str], feature_count: int):
        unknown = components - ALL_COMPONENTS
        if unknown:
            raise ConfigError(f"unknown components: {sorted(unknown)}")
        self.config = config
        self.components = frozenset(components)
        self.feature_count = feature_count
        root = SeededRng(config.seed)
        self.lpo = init_lpo_params(config.d, feature_count, root.child("init/lpo"), with_text="lpo" in components)
        self.dgso: DgsoParams | None = None
        if "dgso" in components:
            self.dgso = init_dgso_params(
                config.n, config.projection_width, config.layers, config.ema_lambda, root.child("init/dgso")
            )
        self.global_gate: GlobalGateParams | None = None
        if "rcpg" in components:
            self.global_gate = init_global_gate(config.d, root.child("init/global"))
        self.ssa: SsaParams = init_ssa_params(
            config.d,
            config.horizon,
            config.blocks,
            config.day_slots,
            root.child("init/ssa"),
            with_feature_attention="ssa" in components,
            heads=config.heads,
            pooling=config.pooling,
        )
        self.aux_w: Tensor | None = None
        self.aux_b: Tensor | None = None
        if self.uses_stage1:
            aux_rng = root.child("init/aux")
            self.aux_w = Tensor(aux_rng.glorot(1, config.n), requires_grad=True, name="aux/w")
            self.aux_b = Tensor(np.zeros(1), requires_grad=True, name="aux/b")
        self.a_star: np.ndarray | None = None
        self.scaler_mean = np.zeros(feature_count)
        self.scaler_std = np.ones(feature_count)
        self.stage1_history: list[float] = []
        self.stage2_history: list[float] = []
        self.pad_events = 0

    # -- bookkeeping ---------------------------------------------------

    @property
    def uses_stage1(self) -> bool:
        return "dgso" in self.components or "lpo" in self.components

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def put(t: Tensor | None):
            if t is not None:
                out[t.name] = t

        for t in (self.lpo.w_embed, self.lpo.b_embed, self.lpo.prompt_struct, self.lpo.prompt_text,
                  self.lpo.w_query, self.lpo.w_key, self.lpo.w_value, self.lpo.w_gate):
            put(t)
        if self.dgso is not None:
            for layer in self.dgso.layers:
                for t in (layer.w_query, layer.w_key, layer.w_trans, layer.ln_gamma, layer.ln_beta):
                    put(t)
        if self.global_gate is not None:
            put(self.global_gate.w_gate)
            put(self.global_gate.b_gate)
        put(self.ssa.tod_table)
        put(self.ssa.dow_table)
        for block in self.ssa.blocks:
            for name in ("t_wq", "t_wk", "t_wv", "t_wo", "ln1_gamma", "ln1_beta",
                         "f_wq", "f_wk", "f_wv", "f_wo", "ln2_gamma", "ln2_beta",
                         "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln3_gamma", "ln3_beta"):
                put(getattr(block, name))
        put(self.ssa.head_w)
        put(self.ssa.head_b)
        put(self.aux_w)
        put(self.aux_b)
        return out

    def stage1_parameters(self) -> dict[str, Tensor]:
        """Embedding, local fusion, graph, and the auxiliary head."""
        keep = ("lpo/", "dgso/", "aux/")
        return {k: v for k, v in self.named_parameters().items() if k.startswith(keep)}

    def stage2_parameters(self) -> dict[str, Tensor]:
        """Everything except the stage-1 auxiliary head."""
        return {k: v for k, v in self.named_parameters().items() if not k.startswith("aux/")}

    def set_scaler(self, mean: np.ndarray, std: np.ndarray) -> None:
        if mean.shape != (self.feature_count,) or std.shape != (self.feature_count,):
            raise ShapeError(f"scaler arrays must have shape ({self.feature_count},)")
        self.scaler_mean = mean.astype(np.float64)
        self.scaler_std = np.where(std == 0.0, 1.0, std).astype(np.float64)

    def freeze_structure(self, matrix: np.ndarray) -> None:
        rows = matrix.sum(axis=1, keepdims=True)
        normalized = matrix / rows
        normalized.setflags(write=False)
        self.a_star = normalized

    def structure_or_uniform(self) -> np.ndarray:
        return self.a_star if self.a_star is not None else uniform_matrix(self.config.d)

    # -- scaling -------------------------------------------------------

    def scale_inputs(self, x: np.ndarray) -> np.ndarray:
        return (x - self.scaler_mean) / self.scaler_std

    def scale_targets(self, y: np.ndarray) -> np.ndarray:
        return (y - self.scaler_mean[0]) / self.scaler_std[0]

    def unscale_predictions(self, y: np.ndarray) -> np.ndarray:
        return y * self.scaler_std[0] + self.scaler_mean[0]

    # -- forwards ------------------------------------------------------

    def _fused_rows(self, window: SeriesWindow) -> Tensor:
        x = constant(self.scale_inputs(window.inputs))
        hs = embed_structured_rows(x, self.lpo)
        if "lpo" not in self.components:
            return hs
        t_steps = window.inputs.shape[0]
        z_rows = []
        for t in range(t_steps):
            tokens = window.local_tokens[t]
            if tokens.shape[0]:
                z_rows.append(guided_cross_attention(take_row(hs, t), tokens, self.lpo))
            else:
                z_rows.append(zeros(self.config.d))
        z = stack_rows(z_rows)
        g = sigmoid(linear(concat_cols(hs, z), self.lpo.w_gate))
        return mix(g, hs, z)

    def _step_vectors(self, window: SeriesWindow, fused: Tensor) -> tuple[Tensor, list[np.ndarray] | None, int]:
        if self.dgso is None:
            return fused, None, 0
        result = run_dgso(fused, self.dgso, self.config.n)
        return stack_rows(result.step_vectors), result.final_matrices, result.pad_count

    def _prompt_term(self) -> Tensor | None:
        if "lpo" in self.components:
            return prompt_loss(self.lpo)
        return None

    def stage1_forward(self, window: SeriesWindow) -> tuple[Tensor, ForwardResult]:
        """Auxiliary one-step-ahead objective over the graph's node states."""
        fused = self._fused_rows(window)
        t_steps = fused.data.shape[0]
        pad = 0
        if self.dgso is not None:
            result = run_dgso(fused, self.dgso, self.config.n)
            final_states = result.final_states
            matrices = result.final_matrices
            pad = result.pad_count
        else:
            n = self.config.n
            pad = max(0, n - t_steps)
            final_states = history_columns(fused, t_steps - 1, n)
            matrices = None
        aux_in = mean_rows(final_states)
        aux_pred = linear(aux_in, self.aux_w, self.aux_b)
        target = self.scale_targets(window.targets[:1])
        loss = sse(aux_pred, target)
        prompt = self._prompt_term()
        if prompt is not None and self.config.lambda_prompt > 0.0:
            loss = add(loss, scale(prompt, self.config.lambda_prompt))
        return loss, ForwardResult(
            predictions=None,
            prompt_term=prompt,
            aux_prediction=aux_pred,
            final_matrices=matrices,
            pad_count=pad,
        )

    def stage2_forward(self, window: SeriesWindow) -> ForwardResult:
        """Full value path: fuse, refine, gate, weight, encode, forecast."""
        fused = self._fused_rows(window)
        vecs, matrices, pad = self._step_vectors(window, fused)
        t_steps = window.inputs.shape[0]
        if self.global_gate is not None:
            pooled = window.global_pooled
            tiled = constant(np.tile(pooled, (t_steps, 1)))
            g = sigmoid(linear(concat_cols(vecs, tiled), self.global_gate.w_gate, self.global_gate.b_gate))
            vecs = mix(g, vecs, constant(pooled))
        if "acmfw" in self.components:
            vecs = matmul_nt(vecs, constant(self.structure_or_uniform()))
        e = embed_sequence(vecs, window.slots, window.dows, self.ssa)
        bias = structural_bias(self.structure_or_uniform()) if "ssa" in self.components else None
        predictions = forecast(e, bias, self.ssa)
        return ForwardResult(
            predictions=predictions,
            prompt_term=self._prompt_term(),
            aux_prediction=None,
            final_matrices=matrices,
            pad_count=pad,
        )


def joint_loss(predictions: Tensor, targets: np.ndarray, lpo_params: LpoParams | None, lambda_prompt: float) -> Tensor:
    """Sum of squared horizon errors plus the weighted prompt-alignment term."""
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.data.shape != targets.shape:
        raise ShapeError(f"predictions {predictions.data.shape} do not match targets {targets.shape}")
    loss = sse(predictions, targets)
    if lpo_params is not None and lpo_params.has_text_fusion and lambda_prompt > 0.0:
        loss = add(loss, scale(prompt_loss(lpo_params), lambda_prompt))
    return loss


def build_model(config: TrainConfig, components: frozenset[str] | Sequence[str] = ALL_COMPONENTS,
                feature_count: int = 5) -> Model:
    return Model(config, frozenset(components), feature_count)


def build_backbone(config: TrainConfig, feature_count: int = 5) -> Model:
    """Structured embedding + temporal-only encoder + heads, texts ignored."""
    return Model(config, frozenset(), feature_count)
