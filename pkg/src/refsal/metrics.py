"""Intersection-over-union metrics with a positional/other expression split."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .heatmap import as_binary_mask
from .parsing import parse


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a AND b| / |a OR b|; two empty masks agree perfectly (1.0)."""
    ma = as_binary_mask(a)
    mb = as_binary_mask(b)
    if ma.shape != mb.shape:
        raise ShapeError(f"mask shapes differ: {ma.shape} vs {mb.shape}")
    union = int(np.sum(ma | mb))
    if union == 0:
        return 1.0
    return float(np.sum(ma & mb)) / union


@dataclass
class MetricsReport:
    per_sample: dict[str, float]
    miou: float
    oiou: float
    position_miou: float | None
    others_miou: float | None
    position_count: int
    others_count: int
    missing: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "per_sample": {k: self.per_sample[k] for k in sorted(self.per_sample)},
            "miou": self.miou,
            "oiou": self.oiou,
            "position_count": self.position_count,
            "others_count": self.others_count,
            "missing": sorted(self.missing),
        }
        # Empty buckets are reported as absent, not as zero.
        if self.position_miou is not None:
            out["position_miou"] = self.position_miou
        if self.others_miou is not None:
            out["others_miou"] = self.others_miou
        return out


def aggregate_metrics(records, predictions: dict[str, np.ndarray], lexicon=None) -> MetricsReport:
    """Score one prediction per record; absent predictions are listed, not averaged.

    `records` is an iterable with sample_id, expression, and gt mask fields;
    the positional bucket is decided by parsing each expression.
    """
    per_sample: dict[str, float] = {}
    missing: list[str] = []
    inter_total = 0
    union_total = 0
    position: list[float] = []
    others: list[float] = []
    for record in records:
        pred = predictions.get(record.sample_id)
        if pred is None:
            missing.append(record.sample_id)
            continue
        gt = as_binary_mask(record.gt)
        pm = as_binary_mask(pred)
        if pm.shape != gt.shape:
            raise ShapeError(
                f"prediction for {record.sample_id} has shape {pm.shape}, gt {gt.shape}"
            )
        value = iou(pm, gt)
        per_sample[record.sample_id] = value
        inter_total += int(np.sum(pm & gt))
        union_total += int(np.sum(pm | gt))
        if parse(record.expression, lexicon).positional:
            position.append(value)
        else:
            others.append(value)
    scored = list(per_sample.values())
    miou = float(np.mean(scored)) if scored else 0.0
    oiou = 1.0 if union_total == 0 else inter_total / union_total
    return MetricsReport(
        per_sample=per_sample,
        miou=miou,
        oiou=float(oiou),
        position_miou=float(np.mean(position)) if position else None,
        others_miou=float(np.mean(others)) if others else None,
        position_count=len(position),
        others_count=len(others),
        missing=missing,
    )
