"""The kernel view of attention and its exact decomposition identity."""

import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixprop.attention import (
    AttentionConfig,
    build_mask,
    exp_kernel,
    kernel_attention,
    kernel_decomposed_attention,
    lambda_weights,
    prefix_propagation_attention,
)
from prefixprop.errors import ConfigError, EmptyKeysError
from prefixprop.tensor import Tensor, concat_rows

from conftest import make_layer_weights


class TestExpKernel:
    def test_orthogonal_vectors(self):
        assert exp_kernel([1.0, 0.0], [0.0, 1.0], d_k=2) == 1.0

    def test_unit_vector_analytic(self):
        value = exp_kernel([1.0, 0, 0, 0], [1.0, 0, 0, 0], d_k=4)
        npt.assert_allclose(value, math.exp(0.5), atol=1e-12)

    def test_matches_direct_formula(self, rng):
        q = rng.normal(size=6)
        k = rng.normal(size=6)
        npt.assert_allclose(
            exp_kernel(q, k, d_k=6), math.exp(float(q @ k) / math.sqrt(6)), atol=1e-12
        )

    def test_always_positive(self, rng):
        assert exp_kernel(-10 * np.ones(4), 10 * np.ones(4), 4) > 0.0


class TestKernelAttention:
    def test_single_key_returns_value_row(self, rng):
        q = rng.normal(size=(5, 4))
        k = rng.normal(size=(1, 4))
        v = rng.normal(size=(1, 4))
        out = kernel_attention(q, k, v)
        for row in out:
            npt.assert_allclose(row, v[0], atol=1e-15)

    def test_equals_softmax_attention(self, rng):
        q = rng.normal(size=(5, 4))
        k = rng.normal(size=(7, 4))
        v = rng.normal(size=(7, 4))
        logits = q @ k.T / math.sqrt(4)
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        npt.assert_allclose(kernel_attention(q, k, v), p @ v, atol=1e-12)

    def test_duplicated_key_value_pair_is_renormalized(self, rng):
        # duplicating a (k, v) pair doubles its kernel weight but the
        # normalizer absorbs it: recompute from the definition directly
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(4, 4))
        v = rng.normal(size=(4, 4))
        k2 = np.concatenate([k, k[:1]])
        v2 = np.concatenate([v, v[:1]])
        weights = np.array(
            [[exp_kernel(qi, kj, 4) for kj in k2] for qi in q]
        )
        expected = (weights @ v2) / weights.sum(axis=1, keepdims=True)
        npt.assert_allclose(kernel_attention(q, k2, v2), expected, atol=1e-12)

    def test_empty_keys_error(self, rng):
        with pytest.raises(EmptyKeysError):
            kernel_attention(rng.normal(size=(2, 4)), np.zeros((0, 4)), np.zeros((0, 4)))


class TestLambdaWeights:
    def test_equal_logits_give_prefix_share(self, rng):
        # zero query projections make every key equally likely:
        # lambda = j / (j + m) for every query and head
        j, m, d = 3, 10, 8
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=j, window="full")
        w = make_layer_weights(rng, d)
        w.w_q.data[:] = 0.0
        kw = lambda_weights(cfg, Tensor(rng.normal(size=(j, d))), Tensor(rng.normal(size=(m, d))), w)
        npt.assert_allclose(kw.lam, np.full((2, j + m), j / (j + m)), atol=1e-12)

    def test_empty_prefix_gives_zero(self, rng):
        d = 8
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=0, window="full")
        w = make_layer_weights(rng, d)
        kw = lambda_weights(cfg, Tensor(np.zeros((0, d))), Tensor(rng.normal(size=(5, d))), w)
        npt.assert_array_equal(kw.lam, np.zeros((2, 5)))

    def test_bounds(self, rng):
        j, m, d = 4, 6, 8
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=j, window="full")
        w = make_layer_weights(rng, d, scale=2.0)
        kw = lambda_weights(cfg, Tensor(rng.normal(size=(j, d))), Tensor(rng.normal(size=(m, d))), w)
        assert (kw.lam > 0).all() and (kw.lam < 1).all()


class TestDecompositionIdentity:
    def _check(self, rng, d, heads, j, m, window="full"):
        cfg = AttentionConfig(
            d_model=d, n_heads=heads, prefix_len=j, window=window,
            global_positions=frozenset({0}) if window != "full" else frozenset(),
        )
        w = make_layer_weights(rng, d)
        d_in = concat_rows([Tensor(rng.normal(size=(j, d))), Tensor(rng.normal(size=(m, d)))])
        mask = build_mask(cfg, m)
        left = kernel_decomposed_attention(cfg, d_in, w, "exact", mask)
        right = prefix_propagation_attention(cfg, d_in, w, mask)
        return float(np.abs(left.data - right.data).max())

    def test_exact_equals_full_attention_sweep(self, rng):
        worst = 0.0
        for d in (4, 8, 16):
            for heads in (1, 2):
                for j in (1, 2, 4):
                    for m in (2, 9, 16):
                        worst = max(worst, self._check(rng, d, heads, j, m))
        assert worst < 1e-10

    def test_exact_holds_under_sliding_window_mask(self, rng):
        worst = max(self._check(rng, 8, 2, 3, 12, window=2) for _ in range(10))
        assert worst < 1e-10

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(2, 16), st.sampled_from([4, 8, 16]),
           st.sampled_from([1, 2]), st.integers(0, 2**31 - 1))
    def test_exact_identity_property(self, j, m, d, heads, seed):
        rng = np.random.default_rng(seed)
        assert self._check(rng, d, heads, j, m) < 1e-10

    def test_alpha_one_coincides_with_exact(self, rng):
        d, j, m = 8, 3, 10
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=j, window="full")
        w = make_layer_weights(rng, d)
        d_in = Tensor(rng.normal(size=(j + m, d)))
        mask = build_mask(cfg, m)
        exact = kernel_decomposed_attention(cfg, d_in, w, "exact", mask)
        one = kernel_decomposed_attention(cfg, d_in, w, 1.0, mask)
        npt.assert_allclose(one.data, exact.data, atol=1e-12)

    def test_vanishing_alpha_approaches_sequence_only(self, rng):
        # moderate logit scale so the log(alpha) shift dominates every gap
        d, j, m = 8, 3, 10
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=j, window="full")
        w = make_layer_weights(rng, d, scale=d**-0.5)
        prefix = Tensor(rng.normal(size=(j, d)))
        seq = Tensor(rng.normal(size=(m, d)))
        d_in = concat_rows([prefix, seq])
        mask = build_mask(cfg, m)
        tiny = kernel_decomposed_attention(cfg, d_in, w, 1e-12, mask)
        # sequence-only oracle: same queries, keys/values from the sequence alone
        dh = cfg.d_head
        outs = []
        for h in range(cfg.n_heads):
            lo, hi = h * dh, (h + 1) * dh
            q = d_in.data @ w.w_q.data[:, lo:hi]
            k = seq.data @ w.w_k.data[:, lo:hi]
            v = seq.data @ w.w_v.data[:, lo:hi]
            s = q @ k.T / math.sqrt(dh)
            p = np.exp(s - s.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            outs.append(p @ v)
        oracle = np.concatenate(outs, axis=1) @ w.w_o.data
        npt.assert_allclose(tiny.data, oracle, atol=1e-6)

    def test_zero_prefix_reduces_to_standard_module(self, rng):
        d, m = 8, 6
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=0, window="full")
        w = make_layer_weights(rng, d)
        c = Tensor(rng.normal(size=(m, d)))
        mask = build_mask(cfg, m)
        a = kernel_decomposed_attention(cfg, c, w, 0.5, mask)
        b = prefix_propagation_attention(cfg, c, w, mask)
        npt.assert_array_equal(a.data, b.data)

    def test_nonpositive_alpha_rejected(self, rng):
        cfg = AttentionConfig(d_model=8, n_heads=2, prefix_len=2, window="full")
        w = make_layer_weights(rng, 8)
        d_in = Tensor(rng.normal(size=(8, 8)))
        for bad in (0.0, -1.0, "nope"):
            with pytest.raises(ConfigError):
                kernel_decomposed_attention(cfg, d_in, w, bad, build_mask(cfg, 6))

    def test_lambda_reconstruction_matches_module_mixture(self, rng):
        # combining the two separately-normalized modules with (1-lambda, lambda)
        # per query row reproduces full attention -- checked head by head
        d, j, m = 8, 2, 7
        cfg = AttentionConfig(d_model=d, n_heads=2, prefix_len=j, window="full")
        w = make_layer_weights(rng, d)
        prefix = Tensor(rng.normal(size=(j, d)))
        seq = Tensor(rng.normal(size=(m, d)))
        kw = lambda_weights(cfg, prefix, seq, w)
        dh = cfg.d_head
        d_full = np.concatenate([prefix.data, seq.data])
        for h in range(cfg.n_heads):
            lo, hi = h * dh, (h + 1) * dh
            q = d_full @ w.w_q.data[:, lo:hi]
            kp = prefix.data @ w.w_k.data[:, lo:hi]
            kc = seq.data @ w.w_k.data[:, lo:hi]
            vp = prefix.data @ w.w_v.data[:, lo:hi]
            vc = seq.data @ w.w_v.data[:, lo:hi]
            module_p = kernel_attention(q, kp, vp)
            module_c = kernel_attention(q, kc, vc)
            mixed = kw.lam[h][:, None] * module_p + (1 - kw.lam[h])[:, None] * module_c
            k_all = np.concatenate([kp, kc])
            v_all = np.concatenate([vp, vc])
            npt.assert_allclose(mixed, kernel_attention(q, k_all, v_all), atol=1e-12)
