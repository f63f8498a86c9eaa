import numpy as np
import numpy.testing as npt
import pytest

from prefixprop.attention import AttentionConfig
from prefixprop.errors import ConfigError, SequenceLengthError, VocabError
from prefixprop.model import (
    MODES,
    PREFIX_MODES,
    EncoderModel,
    derive_tuning_model,
    freeze_check,
    load_checkpoint,
    partition_parameters,
    save_checkpoint,
)

CFG = AttentionConfig(d_model=16, n_heads=2, prefix_len=4, window=3, global_positions=frozenset({0}))
KW = dict(vocab_size=30, max_len=64, n_classes=3, n_layers=2, seed=7)
TOKENS = [0, 5, 9, 2, 17, 3, 21, 8, 12, 4]


def small_model(mode="prefix_propagation", cfg=CFG, **overrides):
    kw = {**KW, **overrides}
    return EncoderModel(cfg, mode=mode, **kw)


class TestForward:
    def test_logit_shape_and_determinism(self):
        model = small_model()
        a = model.logits(TOKENS)
        b = model.logits(TOKENS)
        assert a.shape == (3,)
        npt.assert_array_equal(a, b)

    @pytest.mark.parametrize("mode", MODES)
    def test_all_modes_run(self, mode):
        assert small_model(mode=mode).logits(TOKENS).shape == (3,)

    def test_readout_row_is_mode_dependent(self):
        assert small_model(mode="prefix_propagation").cls_row() == 4
        assert small_model(mode="propagation_kernel").cls_row() == 4
        assert small_model(mode="prefix_tuning").cls_row() == 0
        assert small_model(mode="fine_tuning").cls_row() == 0

    def test_vocab_error(self):
        with pytest.raises(VocabError):
            small_model().forward([0, 99])

    def test_too_long_sequence(self):
        with pytest.raises(SequenceLengthError):
            small_model().forward([0] + [1] * 80)

    def test_first_token_must_be_cls(self):
        with pytest.raises(ConfigError):
            small_model().forward([5, 5])

    def test_float32_forward(self):
        model = small_model(dtype=np.float32)
        out = model.forward(TOKENS)
        assert out.dtype == np.float32


class TestModeReduction:
    @pytest.mark.parametrize("mode", PREFIX_MODES)
    def test_zero_prefix_bit_identical_to_fine_tuning(self, mode, rng):
        cfg0 = CFG.with_prefix_len(0)
        base = EncoderModel(cfg0, mode="fine_tuning", **KW)
        other = EncoderModel(cfg0, mode=mode, **KW)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            tokens = [0] + list(rng.integers(1, KW["vocab_size"], size=n))
            npt.assert_array_equal(base.logits(tokens), other.logits(tokens))


class TestPartition:
    def test_prefix_parameter_counts_and_halving(self):
        # L=2, j=8, d=16: propagation 2*8*16, tuning twice that
        cfg = AttentionConfig(d_model=16, n_heads=2, prefix_len=8, window="full")
        prop = EncoderModel(cfg, mode="prefix_propagation", **KW)
        tune = EncoderModel(cfg, mode="prefix_tuning", **KW)
        assert prop.bank.trainable_count() == 2 * 8 * 16 == 256
        assert tune.bank.trainable_count() == 2 * 2 * 8 * 16 == 512
        assert prop.bank.trainable_count() / tune.bank.trainable_count() == 0.5

    def test_fine_tuning_fraction_is_one(self):
        part = partition_parameters(small_model(mode="fine_tuning"))
        assert part.trainable_fraction == 1.0
        assert part.frozen == []

    def test_prefix_mode_trainables_are_bank_head_cls(self):
        part = partition_parameters(small_model(mode="prefix_propagation"))
        names = {name for name, _ in part.trainable}
        assert names == {"embeddings.cls", "head.w", "head.b"} | {
            f"bank.{l}.p" for l in range(KW["n_layers"])
        }
        assert part.trainable_total + part.frozen_total == part.total

    def test_counts_are_exact(self):
        model = small_model(mode="prefix_tuning")
        part = partition_parameters(model)
        assert part.total == sum(t.data.size for t in model.named_parameters().values())


class TestFreezeCheck:
    def test_prefix_modes_pass(self):
        batch = [(TOKENS, 1), ([0, 4, 4, 4, 4], 2)]
        for mode in PREFIX_MODES:
            assert freeze_check(small_model(mode=mode), batch) is True

    def test_fine_tuning_rejected(self):
        with pytest.raises(ConfigError):
            freeze_check(small_model(mode="fine_tuning"), [(TOKENS, 0)])


class TestCheckpoint:
    @pytest.mark.parametrize("mode", MODES)
    def test_roundtrip_bit_exact(self, tmp_path, mode):
        model = small_model(mode=mode)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        restored = load_checkpoint(path)
        npt.assert_array_equal(model.logits(TOKENS), restored.logits(TOKENS))
        for name, t in model.named_parameters().items():
            npt.assert_array_equal(t.data, restored.named_parameters()[name].data)
            assert t.requires_grad == restored.named_parameters()[name].requires_grad

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text("{}")
        with pytest.raises(ConfigError):
            load_checkpoint(path)


class TestDeriveTuningModel:
    def test_backbone_copied_head_fresh(self):
        base = small_model(mode="fine_tuning", cfg=CFG.with_prefix_len(0))
        derived = derive_tuning_model(base, "prefix_tuning", prefix_len=4, seed=99)
        npt.assert_array_equal(
            derived.tok_table.data, base.tok_table.data
        )
        npt.assert_array_equal(derived.layers[0].w_q.data, base.layers[0].w_q.data)
        assert not np.array_equal(derived.head_w.data, base.head_w.data)
        assert derived.bank is not None and derived.bank.prefix_len == 4
        assert not derived.layers[0].w_q.requires_grad

    def test_kernel_mode_requires_numeric_alpha(self):
        with pytest.raises(ConfigError):
            small_model(mode="propagation_kernel", alpha=0.0)
