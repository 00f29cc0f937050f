"""Finite-difference verification of every differentiable operation.

Each check builds a scalar function around one operation (or the whole
joint objective) and compares tape gradients against central differences.
The end-to-end instance keeps the smoothing coefficient at zero because the
smoothing history is deliberately carried as a constant; any nonzero
coefficient would make the comparison measure that design choice instead of
the gradients. Its input series is smooth so the two-point node layer norm
stays in its epsilon-dominated regime, where finite differences can resolve
the true gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nm
from .fusion_global import init_global_gate, conditional_gate
from .fusion_local import LpoParams, embed_structured, gated_fuse, guided_cross_attention, init_lpo_params, prompt_loss
from .graph import DgsoLayerParams, DgsoParams, build_relation_matrix, graph_conv_layer, run_dgso
from .model import ALL_COMPONENTS, SeriesWindow, TrainConfig, build_model, joint_loss
from .numeric import SeededRng, Tensor, grad_check, sum_sq, tensor
from .predictor import forecast, init_ssa_params, structural_bias
from .text import encode_hashed

__all__ = ["CheckResult", "run_all_checks", "tiny_instance_window", "tiny_instance_config"]

DEFAULT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance


def _weighted(x: Tensor, rng: SeededRng) -> Tensor:
    """Random linear readout; keeps probes away from flat loss directions."""
    return sum_sq(nm.mul(x, tensor(rng.normal(x.data.shape))))


def _check_matmul(rng: SeededRng) -> float:
    b = tensor(rng.normal((4, 3)))
    return grad_check(lambda x: sum_sq(nm.matmul(x, b)), tensor(rng.normal((3, 4))))


def _check_relu(rng: SeededRng) -> float:
    return grad_check(lambda x: sum_sq(nm.relu(x)), tensor(rng.normal((4, 4)) + 0.05))


def _check_sigmoid(rng: SeededRng) -> float:
    return grad_check(lambda x: sum_sq(nm.sigmoid(x)), tensor(rng.normal((4, 4))))


def _check_softmax_rows(rng: SeededRng) -> float:
    return grad_check(lambda x: _weighted(nm.softmax_rows(x), rng.child("w")), tensor(rng.normal((3, 5))))


def _check_layer_norm(rng: SeededRng) -> float:
    gamma = tensor(rng.normal((6,)) + 1.0)
    beta = tensor(rng.normal((6,)))
    return grad_check(lambda x: sum_sq(nm.layer_norm(x, gamma, beta)), tensor(rng.normal((4, 6))))


def _check_linear(rng: SeededRng) -> float:
    w = tensor(rng.glorot(3, 5))
    b = tensor(rng.normal((3,)))
    return grad_check(lambda x: sum_sq(nm.linear(x, w, b)), tensor(rng.normal((4, 5))))


def _check_gate_mix(rng: SeededRng) -> float:
    a = tensor(rng.normal((5,)))
    b = tensor(rng.normal((5,)))
    return grad_check(lambda g: sum_sq(nm.mix(nm.sigmoid(g), a, b)), tensor(rng.normal((5,))))


def _check_embed_structured(rng: SeededRng) -> float:
    params = init_lpo_params(6, 5, rng.child("p"), with_text=False)
    x = rng.normal((5,))

    def f(w):
        p = LpoParams(w_embed=w, b_embed=params.b_embed)
        return sum_sq(embed_structured(x, p))

    return grad_check(f, Tensor(params.w_embed.data.copy()))


def _check_cross_attention(rng: SeededRng) -> float:
    d = 6
    params = init_lpo_params(d, 5, rng.child("p"), with_text=True)
    tokens = encode_hashed("festival crowd near stadium tonight", d).tokens
    h_s = tensor(rng.normal((d,)))

    def f(wq):
        p = LpoParams(
            w_embed=params.w_embed, b_embed=params.b_embed,
            prompt_struct=params.prompt_struct, prompt_text=params.prompt_text,
            w_query=wq, w_key=params.w_key, w_value=params.w_value, w_gate=params.w_gate,
        )
        return sum_sq(guided_cross_attention(h_s, tokens, p))

    return grad_check(f, Tensor(params.w_query.data.copy()))


def _check_gated_fuse(rng: SeededRng) -> float:
    d = 6
    params = init_lpo_params(d, 5, rng.child("p"), with_text=True)
    h_s = tensor(rng.normal((d,)))
    z = tensor(rng.normal((d,)))

    def f(wg):
        p = LpoParams(
            w_embed=params.w_embed, b_embed=params.b_embed,
            prompt_struct=params.prompt_struct, prompt_text=params.prompt_text,
            w_query=params.w_query, w_key=params.w_key, w_value=params.w_value, w_gate=wg,
        )
        _, fused = gated_fuse(h_s, z, p)
        return sum_sq(fused)

    return grad_check(f, Tensor(params.w_gate.data.copy()))


def _check_prompt_loss(rng: SeededRng) -> float:
    d = 6
    params = init_lpo_params(d, 5, rng.child("p"), with_text=True)

    def f(ps):
        p = LpoParams(
            w_embed=params.w_embed, b_embed=params.b_embed,
            prompt_struct=ps, prompt_text=params.prompt_text,
            w_query=params.w_query, w_key=params.w_key, w_value=params.w_value, w_gate=params.w_gate,
        )
        return prompt_loss(p)

    return grad_check(f, Tensor(params.prompt_struct.data.copy()))


def _dgso_layer(rng: SeededRng, n: int) -> DgsoLayerParams:
    return DgsoLayerParams(
        w_query=Tensor(rng.glorot(n, n), requires_grad=True),
        w_key=Tensor(rng.glorot(n, n), requires_grad=True),
        w_trans=Tensor(rng.glorot(n, n), requires_grad=True),
        ln_gamma=Tensor(np.ones(n), requires_grad=True),
        ln_beta=Tensor(np.zeros(n), requires_grad=True),
    )


def _check_relation_matrix(rng: SeededRng) -> float:
    n = 4
    layer = _dgso_layer(rng.child("p"), n)
    states_data = rng.normal((5, n))

    def f(wq):
        probe = DgsoLayerParams(w_query=wq, w_key=layer.w_key, w_trans=layer.w_trans,
                                ln_gamma=layer.ln_gamma, ln_beta=layer.ln_beta)
        return _weighted(build_relation_matrix(tensor(states_data), probe), rng.child("w"))

    return grad_check(f, Tensor(layer.w_query.data.copy()))


def _check_graph_conv(rng: SeededRng) -> float:
    n = 4
    layer = _dgso_layer(rng.child("p"), n)
    states_data = rng.normal((5, n))
    relation = np.full((5, 5), 0.2)

    def f(w):
        probe = DgsoLayerParams(w_query=layer.w_query, w_key=layer.w_key, w_trans=w,
                                ln_gamma=layer.ln_gamma, ln_beta=layer.ln_beta)
        return _weighted(graph_conv_layer(tensor(states_data), tensor(relation), probe), rng.child("w"))

    return grad_check(f, Tensor(layer.w_trans.data.copy()))


def _check_graph_pass(rng: SeededRng) -> float:
    n = 4
    layer = _dgso_layer(rng.child("p"), n)
    rows = rng.normal((6, 3))

    def f(wk):
        probe = DgsoLayerParams(w_query=layer.w_query, w_key=wk, w_trans=layer.w_trans,
                                ln_gamma=layer.ln_gamma, ln_beta=layer.ln_beta)
        params = DgsoParams(layers=[probe], ema_lambda=0.0)
        return _weighted(run_dgso(tensor(rows), params, n).final_states, rng.child("w"))

    return grad_check(f, Tensor(layer.w_key.data.copy()))


def _check_conditional_gate(rng: SeededRng) -> float:
    d = 6
    params = init_global_gate(d, rng.child("p"))
    h = tensor(rng.normal((d,)))
    p_global = tensor(rng.normal((d,)))

    def f(w):
        from .fusion_global import GlobalGateParams

        probe = GlobalGateParams(w_gate=w, b_gate=params.b_gate)
        return sum_sq(conditional_gate(h, p_global, probe))

    return grad_check(f, Tensor(params.w_gate.data.copy()))


def _check_predictor(rng: SeededRng) -> float:
    d = 4
    params = init_ssa_params(d, 2, 1, 4, rng.child("p"), with_feature_attention=True)
    bias = structural_bias(np.full((d, d), 1.0 / d))
    target = rng.normal((2,))

    def f(x):
        return nm.sse(forecast(x, bias, params), target)

    return grad_check(f, tensor(rng.normal((4, d))))


def tiny_instance_config(seed: int = 0) -> TrainConfig:
    """The end-to-end check instance: d=4, n=2, T=4, T'=2, smoothing off."""
    return TrainConfig(
        d=4, n=2, n_prime=2, layers=1, window=4, horizon=2, blocks=1, heads=1,
        day_slots=4, lambda_prompt=0.1, ema_lambda=0.0,
        epochs_stage1=1, epochs_stage2=1, batch_size=1, seed=seed,
    )


def tiny_instance_window(config: TrainConfig, seed: int = 0) -> SeriesWindow:
    """A smooth 4-step window whose per-step text has three tokens."""
    rng = SeededRng(seed).child("tiny-window")
    t, d = config.window, config.d
    base = rng.normal((5,), std=0.5)
    drift = rng.normal((5,), std=0.01)
    inputs = np.stack([base + k * drift for k in range(t)])
    tokens = encode_hashed("festival crowd expected", d).tokens
    return SeriesWindow(
        region="r0",
        inputs=inputs,
        targets=rng.normal((config.horizon,), std=0.5),
        slots=[k % config.day_slots for k in range(t)],
        dows=[0] * t,
        local_tokens=[tokens.copy() for _ in range(t)],
        global_pooled=encode_hashed("citywide gathering", d).pooled,
        start_index=0,
    )


def _check_joint_loss(seed: int, h: float) -> float:
    """Gradients of the full objective for every live parameter at once."""
    config = tiny_instance_config(seed)
    model = build_model(config, ALL_COMPONENTS, feature_count=5)
    window = tiny_instance_window(config, seed)
    params = {k: v for k, v in model.named_parameters().items() if not k.startswith("aux/")}

    def loss_value() -> Tensor:
        result = model.stage2_forward(window)
        return joint_loss(result.predictions, model.scale_targets(window.targets),
                          model.lpo, config.lambda_prompt)

    nm.clear_tape()
    grads = nm.backward(loss_value(), params=params.values())
    worst = 0.0
    with nm.no_tape():
        for param in params.values():
            analytic = grads[param]
            flat = param.data.reshape(-1)
            aflat = analytic.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value().item()
                flat[i] = orig - h
                down = loss_value().item()
                flat[i] = orig
                if not (math.isfinite(up) and math.isfinite(down)):
                    raise nm.NumericError("joint loss non-finite at probe point")
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(aflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst


def run_all_checks(seed: int = 0, h: float = 1e-5) -> list[CheckResult]:
    """Every per-op check plus the end-to-end joint objective."""
    checks = [
        ("matmul", _check_matmul),
        ("relu", _check_relu),
        ("sigmoid", _check_sigmoid),
        ("softmax_rows", _check_softmax_rows),
        ("layer_norm", _check_layer_norm),
        ("linear", _check_linear),
        ("gate_mix", _check_gate_mix),
        ("embed_structured", _check_embed_structured),
        ("guided_cross_attention", _check_cross_attention),
        ("gated_fuse", _check_gated_fuse),
        ("prompt_loss", _check_prompt_loss),
        ("relation_matrix", _check_relation_matrix),
        ("graph_conv", _check_graph_conv),
        ("graph_pass", _check_graph_pass),
        ("conditional_gate", _check_conditional_gate),
        ("predictor", _check_predictor),
    ]
    results = []
    for name, fn in checks:
        rng = SeededRng(seed).child(f"gradcheck/{name}")
        results.append(CheckResult(name=name, max_error=fn(rng)))
    results.append(CheckResult(name="joint_loss", max_error=_check_joint_loss(seed, h)))
    return results
