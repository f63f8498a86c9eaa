"""Expected calibration error over model predictions.

Convention: confidence is the maximum class probability, binned into
``n_bins`` equal-width bins over (0, 1] -- confidence c falls in bin
ceil(c * n_bins), with c = 0 mapped to bin 1.  ECE is the count-weighted
mean absolute gap between per-bin accuracy and per-bin mean confidence;
empty bins contribute nothing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class PredictionRecord:
    confidence: float
    predicted: int
    label: int

    @property
    def correct(self) -> bool:
        return self.predicted == self.label


@dataclass
class CalibrationReport:
    n_bins: int
    counts: list[int]
    mean_confidence: list[float]
    accuracy: list[float]
    ece: float

    @property
    def n_total(self) -> int:
        return sum(self.counts)

    def recompute_ece(self) -> float:
        """ECE re-derived from the binned summary (exactness check)."""
        total = self.n_total
        return sum(
            (c / total) * abs(a - m)
            for c, m, a in zip(self.counts, self.mean_confidence, self.accuracy)
            if c
        )

    def rows(self) -> list[tuple[float, float, int, float, float]]:
        """(bin_low, bin_high, count, mean_confidence, accuracy) per bin."""
        width = 1.0 / self.n_bins
        return [
            (b * width, (b + 1) * width, self.counts[b], self.mean_confidence[b], self.accuracy[b])
            for b in range(self.n_bins)
        ]


def bin_index(confidence: float, n_bins: int) -> int:
    """0-based bin of a confidence in [0, 1]; bins are left-open."""
    if not 0.0 <= confidence <= 1.0:
        raise ConfigError(f"confidence must lie in [0, 1], got {confidence}")
    return max(1, math.ceil(confidence * n_bins)) - 1


def ece(records: list[PredictionRecord], n_bins: int = 10) -> CalibrationReport:
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    if not records:
        raise ConfigError("ece needs at least one prediction record")
    counts = [0] * n_bins
    conf_sums = [0.0] * n_bins
    correct = [0] * n_bins
    for r in records:
        b = bin_index(r.confidence, n_bins)
        counts[b] += 1
        conf_sums[b] += r.confidence
        correct[b] += int(r.correct)
    mean_conf = [conf_sums[b] / counts[b] if counts[b] else 0.0 for b in range(n_bins)]
    acc = [correct[b] / counts[b] if counts[b] else 0.0 for b in range(n_bins)]
    total = len(records)
    value = sum((counts[b] / total) * abs(acc[b] - mean_conf[b]) for b in range(n_bins) if counts[b])
    return CalibrationReport(
        n_bins=n_bins, counts=counts, mean_confidence=mean_conf, accuracy=acc, ece=value
    )


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def collect_predictions(model, dataset) -> list[PredictionRecord]:
    """Eval-mode predictions with max-probability confidences."""
    records = []
    for tokens, label in dataset.examples:
        probs = softmax_probs(model.logits(tokens))
        records.append(
            PredictionRecord(
                confidence=float(probs.max()), predicted=int(probs.argmax()), label=int(label)
            )
        )
    return records


def write_reliability_csv(report: CalibrationReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_low", "bin_high", "count", "mean_confidence", "accuracy"])
        for row in report.rows():
            writer.writerow([repr(row[0]), repr(row[1]), row[2], repr(row[3]), repr(row[4])])
