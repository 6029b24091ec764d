"""Reconstruction scoring, threshold calibration, and anomaly classification.

A block is scored by the per-voxel mean squared error of its reconstruction.
The decision threshold is calibrated on a validation split (midpoint between
consecutive sorted scores maximizing F1) and then applied unchanged.  For
stochastic models the anomaly probability of a block is the fraction of
reconstruction passes whose score exceeds the threshold.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .datagen import BlockDataset
from .layers import Sequential
from .metrics import precision_recall_f1
from .training import TrainedModel

# Deterministic point estimates produce hard 0/1 anomaly probabilities, which
# make calibration error degenerate; they are softened to these values.
PE_SOFT_HIGH = 0.95
PE_SOFT_LOW = 0.05


@dataclass(frozen=True)
class ThresholdResult:
    tau: float
    f1: float
    degenerate: bool = False


@dataclass(frozen=True)
class AnomalyDecision:
    score: float
    threshold: float
    p_anomaly: float
    label: int
    confidence: float
    block_id: int | None = None
    truth: int | None = None
    anomaly_size: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_anomaly <= 1.0:
            raise ValueError("p_anomaly must lie in [0, 1]")
        if self.label != int(self.p_anomaly > 0.5):
            raise ValueError("label must be 1 exactly when p_anomaly > 0.5")
        if abs(self.confidence - max(self.p_anomaly, 1.0 - self.p_anomaly)) > 1e-12:
            raise ValueError("confidence must equal max(p_anomaly, 1 - p_anomaly)")


def make_decision(
    score: float,
    threshold: float,
    p_anomaly: float,
    block_id: int | None = None,
    truth: int | None = None,
    anomaly_size: int | None = None,
) -> AnomalyDecision:
    return AnomalyDecision(
        score=float(score),
        threshold=float(threshold),
        p_anomaly=float(p_anomaly),
        label=int(p_anomaly > 0.5),
        confidence=float(max(p_anomaly, 1.0 - p_anomaly)),
        block_id=block_id,
        truth=truth,
        anomaly_size=anomaly_size,
    )


def decision_record(decision: AnomalyDecision) -> dict:
    """The JSON-lines record layout for one decision."""
    return {
        "block_id": decision.block_id,
        "score": decision.score,
        "p_anomaly": decision.p_anomaly,
        "label": decision.label,
        "truth": decision.truth,
        "anomaly_size": decision.anomaly_size,
    }


def _reconstruction(model: Sequential, block: np.ndarray) -> np.ndarray:
    x = np.asarray(block, dtype=np.float64)
    if x.ndim != 3 or len(set(x.shape)) != 1:
        raise ValueError("block must be a cube")
    try:
        return model.forward(x[None])[0]
    except ValueError as exc:
        raise ValueError(f"block shape {x.shape} does not match the model input") from exc


def score(model, block) -> float:
    """Per-voxel mean squared reconstruction error of one block."""
    net = model.model if isinstance(model, TrainedModel) else model
    x = np.asarray(block, dtype=np.float64)
    return float(np.mean((_reconstruction(net, x) - x) ** 2))


def pass_scores(
    trained: TrainedModel,
    blocks: np.ndarray,
    rng: np.random.Generator | None = None,
    draws: int | None = None,
) -> np.ndarray:
    """Per-pass per-block reconstruction scores, shape (T, B)."""
    x = np.asarray(blocks, dtype=np.float64)
    outs = trained.passes(x, rng, draws=draws)
    return ((outs - x[None]) ** 2).mean(axis=(2, 3, 4))


def calibrate_threshold(scores, labels) -> ThresholdResult:
    """Threshold maximizing validation F1 over consecutive-score midpoints.

    Ties break toward the smaller threshold.  A score set with no distinct
    consecutive pair (all scores equal) yields that value with the
    ``degenerate`` flag set.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape:
        raise ValueError("scores and labels must be equal-length vectors")
    if s.size < 2 or len(np.unique(y)) < 2:
        raise ValueError("threshold calibration needs both classes present")

    ordered = np.sort(s)
    distinct = ordered[:-1] != ordered[1:]
    midpoints = ((ordered[:-1] + ordered[1:]) / 2.0)[distinct]
    if midpoints.size == 0:
        tau = float(ordered[0])
        return ThresholdResult(tau=tau, f1=precision_recall_f1(y, s > tau).f1, degenerate=True)

    best_tau, best_f1 = None, -1.0
    for tau in midpoints:
        f1 = precision_recall_f1(y, s > tau).f1
        if f1 > best_f1:
            best_tau, best_f1 = float(tau), f1
    return ThresholdResult(tau=best_tau, f1=best_f1, degenerate=False)


def probability_from_passes(per_pass_scores: np.ndarray, tau: float, mode: str) -> np.ndarray:
    """Anomaly probability per block from its per-pass scores (T, B)."""
    exceed = np.asarray(per_pass_scores) > tau
    p = exceed.mean(axis=0)
    if mode == "pe":
        return np.where(exceed[0], PE_SOFT_HIGH, PE_SOFT_LOW)
    return p


def decide_blocks(
    trained: TrainedModel,
    blocks: np.ndarray,
    tau: float,
    rng: np.random.Generator | None = None,
    draws: int | None = None,
    block_ids=None,
    truths=None,
    sizes=None,
) -> list[AnomalyDecision]:
    """Classify a stack of blocks against a calibrated threshold."""
    per_pass = pass_scores(trained, blocks, rng, draws=draws)
    probs = probability_from_passes(per_pass, tau, trained.mode)
    means = per_pass.mean(axis=0)
    n = means.shape[0]

    def pick(values, i):
        return None if values is None else int(values[i])

    return [
        make_decision(
            score=means[i],
            threshold=tau,
            p_anomaly=probs[i],
            block_id=pick(block_ids, i),
            truth=pick(truths, i),
            anomaly_size=pick(sizes, i),
        )
        for i in range(n)
    ]


def classify(
    trained: TrainedModel,
    block: np.ndarray,
    tau: float,
    draws: int | None = None,
    rng: np.random.Generator | None = None,
) -> AnomalyDecision:
    """Decision for a single block; ``draws`` is the stochastic pass count."""
    if draws is not None and draws < 1:
        raise ValueError("draws must be >= 1")
    x = np.asarray(block, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("block must be a cube")
    return decide_blocks(trained, x[None], tau, rng, draws=draws)[0]


def split_leakage(dataset: BlockDataset) -> int:
    """Number of block contents shared verbatim across different splits."""
    tags_by_digest: dict[bytes, set[int]] = {}
    for i in range(dataset.count):
        digest = hashlib.sha256(dataset.blocks[i].tobytes()).digest()
        tags_by_digest.setdefault(digest, set()).add(int(dataset.split_tags[i]))
    return sum(1 for tags in tags_by_digest.values() if len(tags) > 1)
