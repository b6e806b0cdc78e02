"""Confusion matrices, IoU and accuracy."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError


class ConfusionMatrix:
    """``counts[i, j]`` = pixels with ground truth ``i`` predicted as ``j``."""

    def __init__(self, num_classes: int, counts: np.ndarray | None = None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = counts

    def accumulate(self, pred, gt) -> "ConfusionMatrix":
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.shape != gt.shape:
            raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
        c = self.num_classes
        for arr in (pred, gt):
            if arr.size and (arr.min() < 0 or arr.max() >= c):
                raise DimensionError(f"label values must lie in [0, {c})")
        flat = gt.reshape(-1).astype(np.int64) * c + pred.reshape(-1).astype(np.int64)
        add = np.bincount(flat, minlength=c * c).reshape(c, c)
        return ConfusionMatrix(c, self.counts + add)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        if self.total == 0:
            raise EvaluationError("accuracy of an empty confusion matrix")
        return float(np.trace(self.counts) / self.total)


@dataclass
class IoUResult:
    per_class: list[float | None]
    miou: float

    def subset_miou(self, classes: Iterable[int]) -> float:
        vals = [self.per_class[c] for c in classes if self.per_class[c] is not None]
        if not vals:
            raise EvaluationError("no defined IoU in the requested class subset")
        return float(np.mean(vals))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "iou"])
        for c, v in enumerate(self.per_class):
            w.writerow([c, "" if v is None else f"{v:.6f}"])
        return buf.getvalue()

    def summary(self, subset: Sequence[int] | None = None) -> dict:
        out = {"miou": self.miou,
               "per_class": {str(c): v for c, v in enumerate(self.per_class)}}
        out["subset_miou"] = self.subset_miou(subset) if subset else None
        return out

    def to_json(self, subset: Sequence[int] | None = None) -> str:
        return json.dumps(self.summary(subset), indent=2, sort_keys=True)


def iou(cm: ConfusionMatrix) -> IoUResult:
    """IoU = TP / (TP + FP + FN); classes absent from both sides are undefined."""
    tp = np.diag(cm.counts).astype(np.float64)
    denom = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - np.diag(cm.counts)
    per_class: list[float | None] = [
        None if d == 0 else float(t / d) for t, d in zip(tp, denom)]
    defined = [v for v in per_class if v is not None]
    if not defined:
        raise EvaluationError("every class is undefined (empty confusion matrix)")
    return IoUResult(per_class, float(math.fsum(defined) / len(defined)))


def confusion(preds: Iterable, gts: Iterable, num_classes: int) -> ConfusionMatrix:
    cm = ConfusionMatrix(num_classes)
    for p, g in zip(preds, gts):
        cm = cm.accumulate(p, g)
    return cm
