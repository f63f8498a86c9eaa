import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixprop.attention import AttentionConfig
from prefixprop.calibration import (
    CalibrationReport,
    PredictionRecord,
    bin_index,
    collect_predictions,
    ece,
    softmax_probs,
    write_reliability_csv,
)
from prefixprop.errors import ConfigError
from prefixprop.model import EncoderModel
from prefixprop.tasks import gen_majority


class TestBinIndex:
    def test_left_open_bins(self):
        assert bin_index(0.0, 10) == 0  # c=0 maps into bin 1
        assert bin_index(0.1, 10) == 0  # boundary belongs to the lower bin
        assert bin_index(0.100001, 10) == 1
        assert bin_index(1.0, 10) == 9

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            bin_index(1.5, 10)


class TestEce:
    def test_perfectly_calibrated_confident(self):
        records = [PredictionRecord(1.0, 0, 0)] * 7
        assert ece(records, 10).ece == 0.0

    def test_hand_computed_split_bin(self):
        # both records land in bin 10: acc 0.5, conf 0.95 -> ECE 0.45
        records = [PredictionRecord(0.95, 0, 0), PredictionRecord(0.95, 1, 0)]
        npt.assert_allclose(ece(records, 10).ece, 0.45, atol=1e-12)

    def test_maximal_miscalibration(self):
        records = [PredictionRecord(1.0, 1, 0)] * 4
        assert ece(records, 10).ece == 1.0

    def test_two_bin_hand_case(self):
        # bin (0.5, 1]: 2 records conf .8, acc 1; bin (0, .5]: 2 records conf .3, acc 0
        records = [
            PredictionRecord(0.8, 0, 0),
            PredictionRecord(0.8, 1, 1),
            PredictionRecord(0.3, 0, 1),
            PredictionRecord(0.3, 1, 0),
        ]
        report = ece(records, 2)
        npt.assert_allclose(report.ece, 0.5 * abs(1 - 0.8) + 0.5 * abs(0 - 0.3), atol=1e-12)

    def test_empty_records_rejected(self):
        with pytest.raises(ConfigError):
            ece([], 10)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(
        st.tuples(st.floats(0.0, 1.0), st.integers(0, 3), st.integers(0, 3)),
        min_size=1, max_size=60,
    ), st.randoms())
    def test_permutation_invariance(self, raw, rand):
        records = [PredictionRecord(c, p, l) for c, p, l in raw]
        shuffled = list(records)
        rand.shuffle(shuffled)
        npt.assert_allclose(ece(records, 10).ece, ece(shuffled, 10).ece, atol=1e-12)

    def test_recomputation_from_bins_is_exact(self, rng):
        records = [
            PredictionRecord(float(c), int(p), int(l))
            for c, p, l in zip(rng.random(500), rng.integers(0, 3, 500), rng.integers(0, 3, 500))
        ]
        report = ece(records, 10)
        npt.assert_allclose(report.recompute_ece(), report.ece, atol=1e-12)
        assert report.n_total == 500


class TestCollectPredictions:
    def test_confident_logits(self):
        probs = softmax_probs(np.array([10.0, -10.0]))
        assert probs.argmax() == 0 and probs.max() > 0.999

    def test_uniform_logits_confidence_is_reciprocal(self):
        probs = softmax_probs(np.zeros(5))
        npt.assert_allclose(probs.max(), 0.2, atol=1e-12)

    def test_scaling_logits_preserves_argmax(self, rng):
        for _ in range(50):
            z = rng.normal(size=6)
            assert softmax_probs(z).argmax() == softmax_probs(3.7 * z).argmax()

    def test_record_count_matches_dataset(self):
        ds = gen_majority(16, 2, 30, seed=2)
        cfg = AttentionConfig(d_model=16, n_heads=2, window=4, global_positions=frozenset({0}))
        model = EncoderModel(cfg, vocab_size=ds.vocab_size, max_len=32, n_classes=2,
                             n_layers=1, mode="fine_tuning", seed=0)
        records = collect_predictions(model, ds)
        assert len(records) == 30
        assert all(0.0 <= r.confidence <= 1.0 for r in records)


class TestReliabilityCsv:
    def test_csv_layout_and_counts(self, tmp_path):
        records = [PredictionRecord(0.95, 0, 0), PredictionRecord(0.55, 1, 0)]
        report = ece(records, 10)
        path = tmp_path / "reliability.csv"
        write_reliability_csv(report, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "bin_low,bin_high,count,mean_confidence,accuracy"
        assert len(lines) == 11
        counts = [int(line.split(",")[2]) for line in lines[1:]]
        assert sum(counts) == 2

    def test_report_rows_cover_unit_interval(self):
        report = ece([PredictionRecord(0.5, 0, 0)], 4)
        rows = report.rows()
        assert rows[0][0] == 0.0 and rows[-1][1] == 1.0
        assert isinstance(report, CalibrationReport)
