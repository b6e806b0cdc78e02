"""Entropy-based ranking of target images and the easy/hard split."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, DimensionError, InputError

CSV_HEADER = ("image_id", "score", "normalized_score", "rare_class_count", "split")

# Cityscapes train-id order: wall, fence, pole, traffic light, traffic sign,
# terrain, rider, truck, bus, train, motorcycle
CITYSCAPES_RARE = (3, 4, 5, 6, 7, 9, 12, 14, 15, 16, 17)


@dataclass(frozen=True)
class RareClassSet:
    classes: frozenset[int] = frozenset()
    threshold: float = 0.001

    def __post_init__(self):
        object.__setattr__(self, "classes", frozenset(int(c) for c in self.classes))
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError(f"rare-class threshold must lie in [0, 1), got {self.threshold}")
        if any(c < 0 for c in self.classes):
            raise ConfigError("rare class indices must be non-negative")

    @classmethod
    def cityscapes(cls, threshold: float = 0.001) -> "RareClassSet":
        return cls(frozenset(CITYSCAPES_RARE), threshold)


@dataclass(frozen=True)
class RankRecord:
    image_id: str
    score: float
    normalized_score: float
    rare_class_count: int = 0

    def key(self, use_normalized: bool) -> float:
        return self.normalized_score if use_normalized else self.score


@dataclass
class SplitAssignment:
    lam: float
    easy: list[str] = field(default_factory=list)
    hard: list[str] = field(default_factory=list)
    use_normalized: bool = False

    def label_of(self, image_id: str) -> str:
        return "easy" if image_id in set(self.easy) else "hard"

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "use_normalized": self.use_normalized,
                "easy": list(self.easy), "hard": list(self.hard)}


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def rank_score(entropy) -> float:
    """Mean of an entropy map."""
    e = _as_array(entropy)
    if e.size == 0:
        raise DimensionError("cannot rank an empty entropy map")
    return float(np.mean(e, dtype=np.float64))


def predicted_rare_classes(pred, rare: RareClassSet) -> int:
    pred = np.asarray(pred)
    if pred.size == 0 or not rare.classes:
        return 0
    counts = np.bincount(pred.reshape(-1).astype(np.int64), minlength=max(rare.classes) + 1)
    frac = counts / pred.size
    return int(sum(1 for c in rare.classes if frac[c] > 0 and frac[c] >= rare.threshold))


def normalized_rank_score(entropy, pred, rare: RareClassSet) -> tuple[float, int]:
    """Mean entropy divided by the number of rare classes present in ``pred`` (at least 1)."""
    k = predicted_rare_classes(pred, rare)
    return rank_score(entropy) / max(k, 1), k


def make_record(image_id: str, entropy, pred=None, rare: RareClassSet | None = None) -> RankRecord:
    score = rank_score(entropy)
    if pred is None or rare is None:
        return RankRecord(image_id, score, score, 0)
    norm, k = normalized_rank_score(entropy, pred, rare)
    return RankRecord(image_id, score, norm, k)


def easy_count(lam: float, n: int) -> int:
    """``round(lam * n)`` with halves rounded up, computed in decimal."""
    return int((Decimal(repr(float(lam))) * n).to_integral_value(rounding=ROUND_HALF_UP))


def order(records: Sequence[RankRecord], use_normalized: bool = False) -> list[RankRecord]:
    return sorted(records, key=lambda r: (r.key(use_normalized), r.image_id))


def split(records: Sequence[RankRecord], lam: float, use_normalized: bool = False) -> SplitAssignment:
    """Lowest-entropy ``round(lam * N)`` images form the easy split."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    ids = [r.image_id for r in records]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate image_id in ranking records")
    for r in records:
        if not np.isfinite(r.key(use_normalized)):
            raise InputError(f"non-finite score for {r.image_id}")
    ranked = order(records, use_normalized)
    k = easy_count(lam, len(ranked))
    return SplitAssignment(lam, [r.image_id for r in ranked[:k]],
                           [r.image_id for r in ranked[k:]], use_normalized)


def format_csv(records: Iterable[RankRecord], assignment: SplitAssignment | None = None,
               use_normalized: bool = False) -> str:
    easy = set(assignment.easy) if assignment is not None else set()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in order(list(records), use_normalized):
        tag = "" if assignment is None else ("easy" if r.image_id in easy else "hard")
        writer.writerow([r.image_id, f"{r.score:.6f}", f"{r.normalized_score:.6f}",
                         r.rare_class_count, tag])
    return buf.getvalue()


def write_csv(path, records, assignment=None, use_normalized=False) -> None:
    Path(path).write_text(format_csv(records, assignment, use_normalized))


def read_csv(path) -> tuple[list[RankRecord], dict[str, str]]:
    """Records plus the ``image_id -> split`` column as written."""
    records, splits = [], {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise InputError(f"{path}: unexpected ranking header {reader.fieldnames}")
        for row in reader:
            records.append(RankRecord(row["image_id"], float(row["score"]),
                                      float(row["normalized_score"]), int(row["rare_class_count"])))
            splits[row["image_id"]] = row["split"]
    return records, splits
