import numpy as np
import pytest

from kgcm.errors import TrainingError
from kgcm.numeric import SeededRng, tensor
from kgcm.optim import AdamState, adam_step, clip_global_norm


def _params(values):
    return {name: tensor(v) for name, v in values.items()}


class TestClipping:
    def test_norm_fifty_scales_by_tenth(self):
        grads = {"w": np.full(100, 5.0)}  # global norm = 50
        clipped = clip_global_norm(grads, 5.0)
        np.testing.assert_allclose(clipped["w"], np.full(100, 0.5))

    def test_below_threshold_untouched(self):
        g = np.array([3.0, 4.0])  # norm 5
        clipped = clip_global_norm({"w": g}, 5.0)
        assert clipped["w"] is g

    def test_norm_spans_parameters(self):
        grads = {"a": np.array([30.0]), "b": np.array([40.0])}  # joint norm 50
        clipped = clip_global_norm(grads, 5.0)
        np.testing.assert_allclose(clipped["a"], [3.0])
        np.testing.assert_allclose(clipped["b"], [4.0])


class TestAdamStep:
    def test_zero_gradient_is_identity(self):
        params = _params({"w": np.array([1.0, -2.0, 3.0])})
        state = AdamState()
        adam_step(state, params, {"w": np.zeros(3)})
        np.testing.assert_array_equal(params["w"].data, [1.0, -2.0, 3.0])

    def test_first_step_closed_form(self):
        # param 0, grad 1: m_hat = v_hat = 1, update = -lr / (1 + eps)
        params = _params({"w": np.array([0.0])})
        state = AdamState(lr=1e-3)
        adam_step(state, params, {"w": np.array([1.0])})
        np.testing.assert_allclose(params["w"].data, [-1e-3 / (1.0 + 1e-8)], rtol=1e-12)

    def test_step_count_increments_once(self):
        params = _params({"w": np.array([0.0])})
        state = AdamState()
        adam_step(state, params, {"w": np.array([0.5])})
        adam_step(state, params, {"w": np.array([0.5])})
        assert state.step_count == 2

    def test_moment_arrays_match_param_dims(self):
        rng = SeededRng(0)
        params = _params({"w": rng.normal((3, 2)), "b": rng.normal((2,))})
        state = AdamState()
        adam_step(state, params, {"w": rng.normal((3, 2)), "b": rng.normal((2,))})
        assert state.m["w"].shape == (3, 2)
        assert state.v["b"].shape == (2,)

    def test_nan_gradient_names_parameter(self):
        params = _params({"good": np.array([0.0]), "bad": np.array([0.0])})
        state = AdamState()
        with pytest.raises(TrainingError, match="bad"):
            adam_step(state, params, {"good": np.array([1.0]), "bad": np.array([np.nan])})

    def test_descends_a_quadratic(self):
        params = _params({"w": np.array([5.0])})
        state = AdamState(lr=0.1)
        for _ in range(200):
            g = 2.0 * params["w"].data
            adam_step(state, params, {"w": g})
        assert abs(params["w"].data[0]) < 0.05
