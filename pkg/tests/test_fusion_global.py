import hashlib

import numpy as np
import pytest

from kgcm.errors import ShapeError
from kgcm.fusion_global import (
    FrozenStructure,
    GlobalGateParams,
    acmfw_weight,
    conditional_gate,
    encode_global_prompt,
    init_global_gate,
)
from kgcm.numeric import SeededRng, clear_tape, tensor
from kgcm.text import EncoderConfig, TextRecord, encode_hashed


@pytest.fixture(autouse=True)
def fresh_tape():
    clear_tape()
    yield
    clear_tape()


class TestEncodeGlobalPrompt:
    def test_empty_text_zero_vector(self):
        cfg = EncoderConfig(mode="hashed", dim=8)
        np.testing.assert_array_equal(encode_global_prompt(TextRecord(""), cfg), np.zeros(8))

    def test_same_text_same_vector(self):
        cfg = EncoderConfig(mode="hashed", dim=8)
        a = encode_global_prompt(TextRecord("citywide holiday surge"), cfg)
        b = encode_global_prompt(TextRecord("citywide holiday surge"), cfg)
        np.testing.assert_array_equal(a, b)

    def test_matches_independent_hash_walkthrough(self):
        # recompute "holiday surge citywide" token by token with bare FNV-1a
        def fnv(word):
            h = 0xCBF29CE484222325
            for byte in word.encode("utf-8"):
                h = ((h ^ byte) * 0x100000001B3) % 2**64
            return h

        d = 16
        expected = np.zeros(d)
        for word in ["holiday", "surge", "citywide"]:
            h = fnv(word)
            expected[h % d] += -1.0 if h >> 63 else 1.0
        expected = expected / np.linalg.norm(expected)
        cfg = EncoderConfig(mode="hashed", dim=d)
        out = encode_global_prompt(TextRecord("holiday surge citywide"), cfg)
        np.testing.assert_allclose(out, expected, atol=1e-15)


class TestConditionalGate:
    def test_zero_params_average(self):
        d = 3
        params = GlobalGateParams(w_gate=tensor(np.zeros((d, 2 * d))), b_gate=tensor(np.zeros(d)))
        h = tensor(np.array([2.0, 4.0, 6.0]))
        p = tensor(np.array([0.0, 0.0, 0.0]))
        out = conditional_gate(h, p, params)
        np.testing.assert_allclose(out.data, [1.0, 2.0, 3.0])

    def test_bias_saturation_keeps_h(self):
        d = 2
        params = GlobalGateParams(w_gate=tensor(np.zeros((d, 2 * d))), b_gate=tensor(np.full(d, 60.0)))
        h = tensor(np.array([1.5, -2.5]))
        p = tensor(np.array([9.0, 9.0]))
        out = conditional_gate(h, p, params)
        np.testing.assert_allclose(out.data, h.data, atol=1e-12)

    def test_equal_inputs_fixed_point(self):
        d = 5
        params = init_global_gate(d, SeededRng(0))
        h = tensor(SeededRng(1).normal((d,)))
        out = conditional_gate(h, h, params)
        np.testing.assert_allclose(out.data, h.data, atol=1e-12)

    def test_convex_combination(self):
        d = 4
        rng = SeededRng(2)
        params = init_global_gate(d, rng)
        for _ in range(50):
            h = tensor(rng.normal((d,)))
            p = tensor(rng.normal((d,)))
            out = conditional_gate(h, p, params)
            lo = np.minimum(h.data, p.data) - 1e-12
            hi = np.maximum(h.data, p.data) + 1e-12
            assert ((out.data >= lo) & (out.data <= hi)).all()


class TestFrozenStructure:
    def test_rejects_non_stochastic(self):
        with pytest.raises(ShapeError):
            FrozenStructure(np.array([[0.5, 0.6], [0.5, 0.5]]), provenance="test")

    def test_rejects_non_square(self):
        with pytest.raises(ShapeError):
            FrozenStructure(np.ones((2, 3)) / 3.0, provenance="test")

    def test_matrix_is_write_protected(self):
        fs = FrozenStructure(np.full((2, 2), 0.5), provenance="test")
        with pytest.raises(ValueError):
            fs.matrix[0, 0] = 1.0

    def test_bytes_stable(self):
        fs = FrozenStructure(np.full((3, 3), 1.0 / 3.0), provenance="test")
        before = hashlib.sha256(fs.matrix.tobytes()).hexdigest()
        _ = acmfw_weight(tensor(np.ones(3)), fs)
        after = hashlib.sha256(fs.matrix.tobytes()).hexdigest()
        assert before == after


class TestAcmfwWeight:
    def test_identity_matrix(self):
        fs = FrozenStructure(np.eye(3), provenance="test")
        h = tensor(np.array([1.0, -2.0, 5.0]))
        out = acmfw_weight(h, fs)
        np.testing.assert_allclose(out.data, h.data, atol=1e-12)

    def test_uniform_matrix_averages(self):
        fs = FrozenStructure(np.full((4, 4), 0.25), provenance="test")
        h = tensor(np.array([1.0, 2.0, 3.0, 6.0]))
        out = acmfw_weight(h, fs)
        np.testing.assert_allclose(out.data, np.full(4, 3.0), atol=1e-12)

    def test_hand_matrix_vector_oracle(self):
        fs = FrozenStructure(np.array([[0.7, 0.3], [0.2, 0.8]]), provenance="test")
        out = acmfw_weight(tensor(np.array([1.0, 2.0])), fs)
        np.testing.assert_allclose(out.data, [1.3, 1.8], atol=1e-12)

    def test_linearity(self):
        rng = SeededRng(3)
        raw = np.abs(rng.uniform((3, 3))) + 0.1
        fs = FrozenStructure(raw / raw.sum(axis=1, keepdims=True), provenance="test")
        u = rng.normal((3,))
        v = rng.normal((3,))
        a, b = 2.5, -1.25
        left = acmfw_weight(tensor(a * u + b * v), fs).data
        right = a * acmfw_weight(tensor(u), fs).data + b * acmfw_weight(tensor(v), fs).data
        np.testing.assert_allclose(left, right, atol=1e-12)

    def test_range_contraction(self):
        rng = SeededRng(4)
        raw = np.abs(rng.uniform((5, 5))) + 0.05
        fs = FrozenStructure(raw / raw.sum(axis=1, keepdims=True), provenance="test")
        for _ in range(50):
            h = rng.normal((5,), std=3.0)
            out = acmfw_weight(tensor(h), fs).data
            assert out.min() >= h.min() - 1e-12
            assert out.max() <= h.max() + 1e-12

    def test_shape_mismatch(self):
        fs = FrozenStructure(np.eye(3), provenance="test")
        with pytest.raises(ShapeError):
            acmfw_weight(tensor(np.ones(4)), fs)
