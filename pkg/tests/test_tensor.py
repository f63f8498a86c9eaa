import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixprop.errors import DegenerateRowError, ShapeError
from prefixprop.tensor import (
    Tensor,
    concat_cols,
    concat_rows,
    cross_entropy_rows,
    dropout,
    embedding_rows,
    gelu,
    layer_norm,
    matmul,
    no_grad,
    slice_cols,
    slice_rows,
    softmax_rows,
    sum_all,
)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), a)
        npt.assert_array_equal(out.data, a.data)

    def test_selector_row(self):
        col = Tensor([[7.0], [9.0]])
        out = matmul(Tensor([[1.0, 0.0]]), col)
        npt.assert_array_equal(out.data, [[7.0]])

    def test_matches_triple_loop_oracle(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        out = matmul(Tensor(a), Tensor(b))
        npt.assert_allclose(out.data, expected, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_associativity_against_oracle(self, rng):
        a, b, c = (Tensor(rng.normal(size=(5, 4))) for _ in range(3))
        b = Tensor(rng.normal(size=(4, 6)))
        c = Tensor(rng.normal(size=(6, 3)))
        left = matmul(matmul(a, b), c).data
        right = matmul(a, matmul(b, c)).data
        npt.assert_allclose(left, right, atol=1e-9)


class TestSoftmaxRows:
    def test_symmetric_row(self):
        out = softmax_rows(Tensor([[0.0, 0.0]]))
        npt.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_analytic_row(self):
        out = softmax_rows(Tensor([[math.log(1.0), math.log(2.0)]]))
        npt.assert_allclose(out.data, [[1 / 3, 2 / 3]], atol=1e-15)

    def test_shift_invariance_no_overflow(self):
        out = softmax_rows(Tensor([[1000.0, 1001.0]]))
        e = math.e
        npt.assert_allclose(out.data, [[1 / (1 + e), e / (1 + e)]], atol=1e-15)
        assert np.isfinite(out.data).all()

    def test_masked_entries_exactly_zero(self):
        mask = np.array([[True, False, True]])
        out = softmax_rows(Tensor([[5.0, 100.0, 5.0]]), mask)
        assert out.data[0, 1] == 0.0
        npt.assert_allclose(out.data.sum(), 1.0, atol=1e-12)

    def test_fully_masked_row_raises(self):
        with pytest.raises(DegenerateRowError, match="row 1"):
            softmax_rows(Tensor([[1.0, 2.0], [3.0, 4.0]]), np.array([[True, True], [False, False]]))

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(1, 6),
        st.integers(1, 8),
        st.integers(0, 2**32 - 1),
    )
    def test_rows_sum_to_one_property(self, r, c, seed):
        x = np.random.default_rng(seed).normal(scale=50.0, size=(r, c))
        out = softmax_rows(Tensor(x))
        npt.assert_allclose(out.data.sum(axis=1), np.ones(r), atol=1e-12)
        assert (out.data >= 0).all()


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        x = Tensor([[3.0, 3.0, 3.0, 3.0]])
        out = layer_norm(x, Tensor(np.ones((1, 4))), Tensor(np.zeros((1, 4))), eps=1e-5)
        npt.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-12)

    def test_already_normalized_row(self):
        x = Tensor([[1.0, -1.0]])
        out = layer_norm(x, Tensor(np.ones((1, 2))), Tensor(np.zeros((1, 2))), eps=1e-14)
        npt.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-6)

    def test_matches_direct_formula(self, rng):
        x = rng.normal(size=(3, 8))
        gamma = rng.normal(size=(1, 8))
        beta = rng.normal(size=(1, 8))
        eps = 1e-5
        mean = x.mean(axis=1, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
        expected = (x - mean) / np.sqrt(var + eps) * gamma + beta
        out = layer_norm(Tensor(x), Tensor(gamma), Tensor(beta), eps=eps)
        npt.assert_allclose(out.data, expected, atol=1e-12)


class TestStructuralOps:
    def test_concat_slice_roundtrip(self, rng):
        a = Tensor(rng.normal(size=(2, 3)))
        b = Tensor(rng.normal(size=(4, 3)))
        cat = concat_rows([a, b])
        npt.assert_array_equal(slice_rows(cat, 0, 2).data, a.data)
        npt.assert_array_equal(slice_rows(cat, 2, 6).data, b.data)
        cat_c = concat_cols([a, Tensor(rng.normal(size=(2, 5)))])
        npt.assert_array_equal(slice_cols(cat_c, 0, 3).data, a.data)

    def test_concat_grad_routes_to_parts(self, rng):
        a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        out = sum_all(concat_rows([a, b]) * 2.0)
        out.backward()
        npt.assert_array_equal(a.grad, np.full((2, 3), 2.0))
        npt.assert_array_equal(b.grad, np.full((1, 3), 2.0))

    def test_float32_preserved_through_ops(self, rng):
        x = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        w = Tensor(rng.normal(size=(4, 4)).astype(np.float32))
        out = gelu(matmul(x, w))
        assert out.dtype == np.float32
        out = softmax_rows(out)
        assert out.dtype == np.float32

    def test_no_grad_blocks_recording(self, rng):
        a = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        with no_grad():
            out = matmul(a, a)
        assert not out.requires_grad
        assert out._parents == ()


class TestEmbeddingAndLoss:
    def test_embedding_gathers_and_scatters(self, rng):
        table = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        cls = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        out = embedding_rows([0, 4, 4], cls, table)
        npt.assert_array_equal(out.data[0], cls.data[0])
        npt.assert_array_equal(out.data[1], table.data[4])
        sum_all(out).backward()
        npt.assert_array_equal(cls.grad, np.ones((1, 3)))
        assert table.grad[4].sum() == 6.0  # two gathers of row 4
        assert table.grad[1].sum() == 0.0

    def test_cross_entropy_uniform_logits(self):
        k = 5
        out = cross_entropy_rows(Tensor(np.zeros((1, k))), [2])
        npt.assert_allclose(out.data, [[math.log(k)]], atol=1e-12)

    def test_cross_entropy_gradient_is_softmax_minus_onehot(self, rng):
        logits = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        sum_all(cross_entropy_rows(logits, [1, 3])).backward()
        z = logits.data - logits.data.max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        p[0, 1] -= 1
        p[1, 3] -= 1
        npt.assert_allclose(logits.grad, p, atol=1e-12)

    def test_dropout_eval_is_identity_train_scales(self, rng):
        x = Tensor(rng.normal(size=(50, 40)))
        assert dropout(x, 0.5, None, train=False) is x
        out = dropout(x, 0.5, np.random.default_rng(0), train=True)
        kept = out.data != 0
        npt.assert_allclose(out.data[kept], x.data[kept] * 2.0, atol=1e-12)
