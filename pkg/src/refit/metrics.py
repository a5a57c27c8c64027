"""Dice, confusion counts, mean IoU and per-image report aggregation.

Empty-mask conventions: two empty masks have a Dice score of 1.0, and a
class absent from both prediction and ground truth has IoU 1.0. Without them
an all-background prediction could not score well on datasets where many
slices hold no lesion at all.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, LabelOutOfRange, MisalignedInputs
from .raster_io import BinaryMask, LabelMap


@dataclass(frozen=True)
class ConfusionCounts:
    """counts[i][j] = number of pixels predicted class i and labelled class j."""

    counts: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class ImageMetrics:
    id: str
    dsc: float
    iou: list[float]
    miou: float


@dataclass
class MetricsReport:
    per_image: list[ImageMetrics] = field(default_factory=list)
    avg_dsc: float = 0.0
    avg_miou: float = 0.0

    def to_dict(self) -> dict:
        return {
            "per_image": [
                {"id": m.id, "dsc": m.dsc, "iou": m.iou, "miou": m.miou} for m in self.per_image
            ],
            "aggregate": {"avg_dsc": self.avg_dsc, "avg_miou": self.avg_miou},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        n = max((len(m.iou) for m in self.per_image), default=0)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "dsc", "miou"] + [f"iou_{i}" for i in range(n)])
        for m in self.per_image:
            writer.writerow([m.id, repr(m.dsc), repr(m.miou)] + [repr(v) for v in m.iou])
        return buf.getvalue()

    def summary(self) -> str:
        """Percent scale, one decimal, the precision results tables are quoted at."""
        return f"avg_dsc {100 * self.avg_dsc:.1f} avg_miou {100 * self.avg_miou:.1f}"


def _bits(m) -> np.ndarray:
    if isinstance(m, BinaryMask):
        return m.bits
    if isinstance(m, LabelMap):
        return m.labels > 0
    return np.asarray(m).astype(bool)


def dsc(a, b) -> float:
    """2|A n B| / (|A| + |B|), with 1.0 when both masks are empty."""
    a, b = _bits(a), _bits(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def _as_labels(m) -> np.ndarray:
    if isinstance(m, BinaryMask):
        return m.bits.astype(np.int64)
    if isinstance(m, LabelMap):
        return m.labels
    return np.asarray(m).astype(np.int64)


def confusion(pred, gt, n_classes: int | None = None) -> ConfusionCounts:
    p, g = _as_labels(pred), _as_labels(gt)
    if p.shape != g.shape:
        raise DimensionMismatch(f"{p.shape} vs {g.shape}")
    if n_classes is None:
        binary = isinstance(pred, BinaryMask) and isinstance(gt, BinaryMask)
        n_classes = 2 if binary else max(int(p.max()), int(g.max()), 1) + 1
    if p.min() < 0 or g.min() < 0 or p.max() >= n_classes or g.max() >= n_classes:
        raise LabelOutOfRange(f"labels must lie in [0, {n_classes})")
    flat = p.ravel() * n_classes + g.ravel()
    counts = np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    return ConfusionCounts(counts.astype(np.int64))


def class_iou(c: ConfusionCounts, skip_absent: bool = False) -> list[float]:
    """Per-class IoU; absent-from-both classes score 1.0, or NaN when ``skip_absent``."""
    p = c.counts
    out = []
    for i in range(c.n_classes):
        inter = int(p[i, i])
        denom = int(p[i, :].sum()) + int(p[:, i].sum()) - inter
        if denom == 0:
            out.append(math.nan if skip_absent else 1.0)
        else:
            out.append(inter / denom)
    return out


def miou(c: ConfusionCounts, skip_absent: bool = False) -> float:
    ious = class_iou(c, skip_absent)
    kept = [v for v in ious if not math.isnan(v)]
    if not kept:
        return 1.0
    return math.fsum(kept) / len(kept)


def image_metrics(image_id: str, pred, gt, n_classes: int | None = None,
                  skip_absent: bool = False) -> ImageMetrics:
    c = confusion(pred, gt, n_classes)
    ious = class_iou(c, skip_absent)
    return ImageMetrics(image_id, dsc(pred, gt), ious, miou(c, skip_absent))


def aggregate(per_image: list[ImageMetrics]) -> MetricsReport:
    if not per_image:
        raise EmptyInput("no images to aggregate")
    ordered = sorted(per_image, key=lambda m: m.id)
    n = len(ordered)
    return MetricsReport(
        per_image=ordered,
        avg_dsc=math.fsum(m.dsc for m in ordered) / n,
        avg_miou=math.fsum(m.miou for m in ordered) / n,
    )


def evaluate_batch(preds: list, gts: list, ids: list[str] | None = None, *,
                   n_classes: int | None = None, skip_absent: bool = False) -> MetricsReport:
    if ids is None:
        ids = [f"{i:06d}" for i in range(len(preds))]
    if not (len(preds) == len(gts) == len(ids)):
        raise MisalignedInputs(f"{len(preds)} predictions, {len(gts)} ground truths, {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise MisalignedInputs("image ids must be unique")
    return aggregate([
        image_metrics(i, p, g, n_classes, skip_absent) for i, p, g in zip(ids, preds, gts)
    ])


def blank_baseline(gts: list[BinaryMask], ids: list[str] | None = None) -> MetricsReport:
    """Score the all-background prediction against every ground truth."""
    if not gts:
        raise EmptyInput("blank baseline needs at least one ground truth")
    blanks = [BinaryMask.zeros(*g.shape) for g in gts]
    return evaluate_batch(blanks, gts, ids)
