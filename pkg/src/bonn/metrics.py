"""Calibration and classification metrics for block-level anomaly decisions.

Expected calibration error bins predictions by confidence into
B_m = ((m-1)/M, m/M] and weights each bin's |accuracy - confidence| gap by
its share of the total sample count, so the result always lies in [0, 1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

DEFAULT_ECE_BINS = 10


@dataclass(frozen=True)
class BinRecord:
    """Per-bin calibration summary; ``index`` is the 1-based bin number m."""

    index: int
    count: int
    accuracy: float
    confidence: float


@dataclass(frozen=True)
class CalibrationReport:
    ece: float
    bins: tuple[BinRecord, ...]
    num_bins: int
    total: int

    def to_dict(self) -> dict:
        return {
            "ece": self.ece,
            "num_bins": self.num_bins,
            "total": self.total,
            "bins": [asdict(b) for b in self.bins],
        }


class PrecisionRecallF1(NamedTuple):
    precision: float
    recall: float
    f1: float
    no_positive_predictions: bool


def _as_binary(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D vector")
    if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must be binary")
    return arr.astype(bool)


def ece(confidences, correct, num_bins: int = DEFAULT_ECE_BINS) -> CalibrationReport:
    """Expected calibration error with M equal-width bins over (0, 1]."""
    conf = np.asarray(confidences, dtype=np.float64)
    flags = _as_binary(correct, "correctness flags")
    if conf.ndim != 1 or conf.shape != flags.shape:
        raise ValueError("confidences and flags must be equal-length vectors")
    if conf.size == 0:
        raise ValueError("ece of empty input is undefined")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if np.any(conf <= 0.0) or np.any(conf > 1.0):
        raise ValueError("confidences must lie in (0, 1]")

    # bin m covers ((m-1)/M, m/M], so membership is ceil(conf * M)
    assignment = np.clip(np.ceil(conf * num_bins).astype(int), 1, num_bins)
    total = conf.size
    records = []
    error = 0.0
    for m in range(1, num_bins + 1):
        mask = assignment == m
        count = int(mask.sum())
        if count == 0:
            records.append(BinRecord(index=m, count=0, accuracy=0.0, confidence=0.0))
            continue
        acc = float(flags[mask].mean())
        avg_conf = float(conf[mask].mean())
        error += count / total * abs(acc - avg_conf)
        records.append(BinRecord(index=m, count=count, accuracy=acc, confidence=avg_conf))
    return CalibrationReport(ece=float(error), bins=tuple(records), num_bins=num_bins, total=total)


def precision_recall_f1(truth, predictions) -> PrecisionRecallF1:
    """Confusion-matrix precision/recall/F1 as fractions in [0, 1].

    With no positive predictions, precision is undefined; it is reported as 0
    with ``no_positive_predictions`` set.
    """
    t = _as_binary(truth, "truth")
    p = _as_binary(predictions, "predictions")
    if t.shape != p.shape:
        raise ValueError("truth and predictions must have equal length")
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    no_pos = (tp + fp) == 0
    precision = 0.0 if no_pos else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if (precision + recall) == 0.0 else 2 * precision * recall / (precision + recall)
    return PrecisionRecallF1(precision, recall, f1, no_pos)


def sda_luda(truth, predictions, sizes) -> tuple[int | None, int | None]:
    """Smallest detected and largest undetected anomaly sizes.

    SDA is the minimum size among anomalous blocks that were flagged; LuDA
    the maximum size among anomalous blocks that were missed.  An empty
    category yields None.
    """
    t = _as_binary(truth, "truth")
    p = _as_binary(predictions, "predictions")
    s = np.asarray(sizes)
    if not (t.shape == p.shape == s.shape):
        raise ValueError("truth, predictions, and sizes must have equal length")
    if np.any(s[t] <= 0):
        raise ValueError("anomalous blocks must carry positive sizes")
    detected = s[t & p]
    missed = s[t & ~p]
    sda = detected.min().item() if detected.size else None
    luda = missed.max().item() if missed.size else None
    return sda, luda


def mse(a, b) -> float:
    """Mean of squared componentwise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def evaluation_summary(
    label: str,
    truth,
    predictions,
    confidences,
    sizes,
    num_bins: int = DEFAULT_ECE_BINS,
) -> dict:
    """One result row per model, in report column order."""
    scores = precision_recall_f1(truth, predictions)
    t = _as_binary(truth, "truth")
    p = _as_binary(predictions, "predictions")
    report = ece(confidences, t == p, num_bins=num_bins)
    sda, luda = sda_luda(truth, predictions, sizes)
    return {
        "model": label,
        "precision": scores.precision,
        "ece": report.ece,
        "recall": scores.recall,
        "f1": scores.f1,
        "sda": sda,
        "luda": luda,
    }
