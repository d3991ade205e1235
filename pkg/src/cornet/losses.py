"""Training objectives and the per-frame mAP evaluation protocol."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .numcore import ShapeError, Tensor

PROB_EPS = 1e-7


def bce_loss(probs, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy over all (valid frame, class) entries.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]`` before the logarithm.
    ``mask`` (length T) excludes padded frames from the mean.
    """
    probs = nc.as_tensor(probs)
    y = np.asarray(targets, dtype=np.float64)
    if probs.shape != y.shape:
        raise ShapeError(f"bce_loss: probabilities {probs.shape} vs targets {y.shape}")
    p = nc.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    ll = nc.log(p) * y + nc.log(1.0 - p) * (1.0 - y)
    if mask is None:
        return -nc.mean(ll)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (y.shape[0],):
        raise ShapeError(f"bce_loss: mask {mask.shape} does not match {y.shape[0]} frames")
    count = mask.sum() * y.shape[1]
    return -nc.tsum(ll * mask[:, None]) / count


def cooc_mse_loss(r, r_star) -> Tensor:
    """Squared row-difference norms between predicted and true matrices, averaged over rows."""
    r = nc.as_tensor(r)
    r_star = np.asarray(r_star, dtype=np.float64)
    if r.ndim != 2 or r.shape != r_star.shape or r.shape[0] != r.shape[1]:
        raise ShapeError(f"cooc_mse_loss: prediction {r.shape} vs ground truth {r_star.shape}")
    return nc.tsum(nc.square(r_star - r)) / r.shape[0]


@dataclass(frozen=True)
class LossBreakdown:
    bce: object
    mse: object
    total: object
    a: float

    def values(self) -> tuple[float, float, float]:
        return tuple(float(np.asarray(getattr(v, "data", v))) for v in (self.bce, self.mse, self.total))


def total_loss(bce, mse, a: float) -> LossBreakdown:
    """``bce + a * mse``; works on floats and on tensors alike."""
    if a < 0:
        raise ValueError(f"loss balance factor must be >= 0, got {a}")
    return LossBreakdown(bce, mse, bce + mse * a, a)


# ---------------------------------------------------------------------------
# evaluation


class NoPositivesError(ValueError):
    pass


def average_precision(scores, labels) -> float:
    """Non-interpolated AP; ties in score are ranked by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels) > 0
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ShapeError(f"average_precision: scores {scores.shape} vs labels {labels.shape}")
    if not labels.any():
        raise NoPositivesError("average_precision: no positive labels")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    # correctly rounded sum so the result does not depend on summation order
    return math.fsum(precision.tolist()) / ranks.size


@dataclass
class EvalReport:
    map: float
    per_class: dict[str, float]
    skipped: list[str]
    frames: int
    seed: int | None = None
    config_digest: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"map": self.map, "per_class": self.per_class, "skipped": self.skipped,
                   "frames": self.frames, "seed": self.seed, "config_digest": self.config_digest}
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def per_frame_map(probs, targets, labels: Sequence[str] | None = None, mask=None,
                  seed: int | None = None, config_digest: str | None = None) -> EvalReport:
    """Per-class AP over pooled frames, averaged over classes with a positive frame.

    ``probs`` and ``targets`` are (frames x N) over all evaluation videos
    concatenated; ``mask`` drops padded frames.
    """
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets)
    if probs.shape != targets.shape or probs.ndim != 2:
        raise ShapeError(f"per_frame_map: probabilities {probs.shape} vs targets {targets.shape}")
    if mask is not None:
        keep = np.asarray(mask) > 0
        probs, targets = probs[keep], targets[keep]
    n = probs.shape[1]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    if len(labels) != n:
        raise ShapeError(f"per_frame_map: {len(labels)} labels for {n} classes")
    per_class, skipped = {}, []
    for c, name in enumerate(labels):
        if not (targets[:, c] > 0).any():
            skipped.append(name)
            continue
        per_class[name] = average_precision(probs[:, c], targets[:, c])
    if not per_class:
        raise NoPositivesError("per_frame_map: no class has a positive frame")
    return EvalReport(math.fsum(per_class.values()) / len(per_class), per_class, skipped,
                      int(probs.shape[0]), seed, config_digest)
