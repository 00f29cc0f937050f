import math

import numpy as np
import pytest

from kgcm.errors import ContractError, DataError, ShapeError
from kgcm.numeric import SeededRng, Tensor, clear_tape, grad_check, sse, tensor
from kgcm.predictor import (
    embed_sequence,
    forecast,
    init_ssa_params,
    sinusoidal_positions,
    ssa_block,
    structural_bias,
)


@pytest.fixture(autouse=True)
def fresh_tape():
    clear_tape()
    yield
    clear_tape()


def _params(d=4, horizon=2, blocks=1, day_slots=4, feature_attention=True, seed=0, **kw):
    return init_ssa_params(d, horizon, blocks, day_slots, SeededRng(seed), feature_attention, **kw)


class TestSinusoidalPositions:
    def test_position_zero_row(self):
        pe = sinusoidal_positions(3, 6)
        np.testing.assert_allclose(pe[0], [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])

    def test_first_position_first_column(self):
        pe = sinusoidal_positions(2, 4)
        assert abs(pe[1, 0] - math.sin(1.0)) < 1e-12
        assert abs(pe[1, 0] - 0.841471) < 1e-6

    def test_row_formula(self):
        d = 8
        pe = sinusoidal_positions(5, d)
        for pos in range(5):
            for i in range(0, d, 2):
                angle = pos / 10000 ** (i / d)
                assert abs(pe[pos, i] - math.sin(angle)) < 1e-12
                assert abs(pe[pos, i + 1] - math.cos(angle)) < 1e-12


class TestEmbedSequence:
    def test_zero_tables_zero_input_gives_pe(self):
        params = _params(d=4, day_slots=4)
        params.tod_table.data[:] = 0.0
        params.dow_table.data[:] = 0.0
        h = tensor(np.zeros((3, 4)))
        out = embed_sequence(h, [0, 1, 2], [0, 0, 0], params)
        np.testing.assert_allclose(out.data, sinusoidal_positions(3, 4))

    def test_tables_added_per_step(self):
        params = _params(d=4, day_slots=4)
        h = tensor(np.zeros((2, 4)))
        out = embed_sequence(h, [1, 3], [2, 6], params)
        expected = (
            params.tod_table.data[[1, 3]]
            + params.dow_table.data[[2, 6]]
            + sinusoidal_positions(2, 4)
        )
        np.testing.assert_allclose(out.data, expected)

    def test_slot_out_of_range(self):
        params = _params(d=4, day_slots=4)
        with pytest.raises(DataError):
            embed_sequence(tensor(np.zeros((1, 4))), [4], [0], params)

    def test_dow_out_of_range(self):
        params = _params(d=4, day_slots=4)
        with pytest.raises(DataError):
            embed_sequence(tensor(np.zeros((1, 4))), [0], [7], params)


class TestStructuralBias:
    def test_zero_entry(self):
        assert structural_bias(np.array([[0.0]]))[0, 0] == 0.0

    def test_log_identity_on_raw_map(self):
        np.testing.assert_allclose(structural_bias(np.array([[math.e - 1.0]])), [[1.0]], atol=1e-12)

    def test_entry_one_gives_ln_two(self):
        out = structural_bias(np.array([[1.0]]))
        assert abs(out[0, 0] - math.log(2.0)) < 1e-12
        assert abs(out[0, 0] - 0.693147) < 1e-6

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            structural_bias(np.array([[-0.1, 1.1], [0.5, 0.5]]))

    def test_monotone_in_each_entry(self):
        rng = SeededRng(0)
        raw = np.abs(rng.uniform((4, 4)))
        a = raw / raw.sum(axis=1, keepdims=True)
        b = structural_bias(a)
        order_a = np.argsort(a, axis=1)
        order_b = np.argsort(b, axis=1)
        np.testing.assert_array_equal(order_a, order_b)

    def test_bounded_by_ln_two_for_stochastic_input(self):
        rng = SeededRng(1)
        raw = np.abs(rng.uniform((6, 6)))
        a = raw / raw.sum(axis=1, keepdims=True)
        b = structural_bias(a)
        assert (b >= 0).all()
        assert (b <= math.log(2.0) + 1e-12).all()


class TestSsaBlock:
    def test_zero_bias_binary_identical_to_no_bias(self):
        d = 4
        params = _params(d=d)
        rng = SeededRng(2)
        x = rng.normal((5, d))
        out_none = ssa_block(tensor(x), None, params.blocks[0])
        out_zero = ssa_block(tensor(x), np.zeros((d, d)), params.blocks[0])
        assert out_none.data.tobytes() == out_zero.data.tobytes()

    def test_feature_weights_softmax_oracle(self):
        # uniform scores with bias row [ln 3, 0] -> weights [0.75, 0.25]
        b = math.log(3.0)
        scores = np.zeros((2, 2))
        biased = scores + np.array([[b, 0.0], [0.0, 0.0]])
        e = np.exp(biased - biased.max(axis=1, keepdims=True))
        w = e / e.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(w[0], [0.75, 0.25], atol=1e-12)

    def test_temporal_weight_rows_sum_to_one(self):
        # realized through the softmax contract; exercise the block end to end
        d = 6
        params = _params(d=d, day_slots=8)
        rng = SeededRng(3)
        x = tensor(rng.normal((7, d)))
        out = ssa_block(x, np.zeros((d, d)), params.blocks[0])
        assert out.data.shape == (7, d)
        assert np.isfinite(out.data).all()

    def test_temporal_score_shift_invariance(self):
        # adding a constant to every temporal score cannot change the output;
        # verified on the softmax directly since scores are internal
        rng = SeededRng(4)
        s = rng.normal((5, 5))
        e1 = np.exp(s - s.max(axis=1, keepdims=True))
        w1 = e1 / e1.sum(axis=1, keepdims=True)
        s2 = s + 3.25
        e2 = np.exp(s2 - s2.max(axis=1, keepdims=True))
        w2 = e2 / e2.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(w1, w2, atol=1e-12)

    def test_multihead_shape_and_determinism(self):
        d = 8
        params = _params(d=d, day_slots=4, heads=2)
        rng = SeededRng(5)
        x = rng.normal((6, d))
        a = ssa_block(tensor(x), None, params.blocks[0], heads=2)
        b = ssa_block(tensor(x), None, params.blocks[0], heads=2)
        assert a.data.shape == (6, d)
        np.testing.assert_array_equal(a.data, b.data)

    def test_head_count_must_divide_dim(self):
        with pytest.raises(ContractError):
            _params(d=6, heads=4)


class TestForecast:
    def test_zero_weights_give_head_biases(self):
        params = _params(d=4, horizon=3, blocks=2)
        for block in params.blocks:
            for name in ("t_wq", "t_wk", "t_wv", "t_wo", "f_wq", "f_wk", "f_wv", "f_wo", "ff_w1", "ff_w2"):
                getattr(block, name).data[:] = 0.0
            for name in ("ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta", "ln3_gamma", "ln3_beta", "ff_b1", "ff_b2"):
                getattr(block, name).data[:] = 0.0
        params.head_w.data[:] = 0.0
        params.head_b.data[:] = [7.0, -1.0, 2.5]
        out = forecast(tensor(SeededRng(6).normal((5, 4))), None, params)
        np.testing.assert_allclose(out.data, [7.0, -1.0, 2.5])

    def test_deterministic(self):
        params = _params(d=4, horizon=2)
        x = SeededRng(7).normal((4, 4))
        bias = structural_bias(np.full((4, 4), 0.25))
        a = forecast(tensor(x), bias, params)
        b = forecast(tensor(x), bias, params)
        np.testing.assert_array_equal(a.data, b.data)

    def test_output_length_is_horizon(self):
        for horizon in (1, 2, 5):
            params = _params(d=4, horizon=horizon)
            out = forecast(tensor(SeededRng(8).normal((3, 4))), None, params)
            assert out.data.shape == (horizon,)

    def test_single_step_sequence_supported(self):
        params = _params(d=4, horizon=2)
        out = forecast(tensor(SeededRng(9).normal((1, 4))), None, params)
        assert out.data.shape == (2,)

    def test_mean_pooling_option(self):
        params = _params(d=4, horizon=2, pooling="mean")
        out = forecast(tensor(SeededRng(10).normal((4, 4))), None, params)
        assert out.data.shape == (2,)

    def test_gradcheck_mse_through_predictor(self):
        # tiny instance: T=4, d=4, horizon 2, one block with feature attention
        d = 4
        params = _params(d=d, horizon=2, blocks=1, seed=11)
        bias = structural_bias(np.full((d, d), 1.0 / d))
        target = np.array([0.3, -0.7])

        def f(x):
            return sse(forecast(x, bias, params), target)

        rng = SeededRng(12)
        err = grad_check(f, Tensor(rng.normal((4, d))))
        assert err < 1e-4

    def test_gradcheck_through_embedding_tables(self):
        d = 4
        params = _params(d=d, horizon=2, blocks=1, seed=13)
        rng = SeededRng(14)
        h = tensor(rng.normal((3, d)))
        target = np.array([0.1, 0.2])

        def f(table):
            p = init_ssa_params(d, 2, 1, 4, SeededRng(13), True)
            p.tod_table = table
            e = embed_sequence(h, [0, 1, 2], [3, 4, 5], p)
            return sse(forecast(e, None, p), target)

        err = grad_check(f, Tensor(params.tod_table.data.copy()))
        assert err < 1e-4
