"""BoundaryFit: snap a class response map to the clusters of an edge map.

A response plane is binarized, then every cluster (a 4-connected component of
one region label) that contains a single negative pixel is flooded negative.
Only clusters lying completely inside the positive area survive.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._grid import components
from .edgemap import EdgeMap
from .errors import BadClassIndex, DimensionMismatch, InvalidParams
from .raster_io import BinaryMask, LabelMap, ResponseMap


class ThresholdMode(str, Enum):
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


class Conflict(str, Enum):
    ARGMAX = "argmax"
    FIRST = "first"


_MODE_ALIASES = {"abs": ThresholdMode.ABSOLUTE, "rel": ThresholdMode.RELATIVE}


@dataclass(frozen=True)
class ThresholdPolicy:
    mode: ThresholdMode = ThresholdMode.ABSOLUTE
    value: float = 0.5

    def __post_init__(self):
        mode = _MODE_ALIASES.get(self.mode, self.mode)
        try:
            object.__setattr__(self, "mode", ThresholdMode(mode))
        except ValueError:
            raise InvalidParams(f"unknown threshold mode {self.mode!r}") from None
        if not 0.0 < self.value < 1.0:
            raise InvalidParams(f"threshold must lie in (0, 1), got {self.value}")


@dataclass(frozen=True)
class RefinedMask:
    """Per-class refined masks and the combined class map (0 = background, n+1 = class n)."""

    per_class: list[BinaryMask]
    combined: LabelMap

    def foreground(self) -> BinaryMask:
        return BinaryMask(self.combined.labels > 0)


def binarize(rmap: ResponseMap, class_idx: int, policy: ThresholdPolicy) -> BinaryMask:
    if not 0 <= class_idx < rmap.classes:
        raise BadClassIndex(f"class {class_idx} not in response map with {rmap.classes} classes")
    plane = rmap.planes[class_idx]
    if policy.mode is ThresholdMode.ABSOLUTE:
        return BinaryMask(plane >= policy.value)
    peak = float(plane.max())
    if peak <= 0.0:
        return BinaryMask.zeros(*plane.shape)
    return BinaryMask(plane >= policy.value * peak)


def boundary_fit(cam_mask: BinaryMask, edges: EdgeMap) -> BinaryMask:
    """Keep a positive pixel only if its whole cluster is positive."""
    if cam_mask.shape != edges.shape:
        raise DimensionMismatch(f"mask {cam_mask.shape} vs edge map {edges.shape}")
    clusters = components(edges.regions.labels)
    negatives = np.bincount(clusters.ravel(), weights=~cam_mask.bits.ravel())
    return BinaryMask(cam_mask.bits & (negatives[clusters] == 0))


def refine(
    image_cam: ResponseMap,
    edges: EdgeMap,
    policy: ThresholdPolicy = ThresholdPolicy(),
    conflict: Conflict | str = Conflict.ARGMAX,
) -> RefinedMask:
    if image_cam.shape != edges.shape:
        raise DimensionMismatch(f"response map {image_cam.shape} vs edge map {edges.shape}")
    conflict = Conflict(conflict)
    per_class = [
        boundary_fit(binarize(image_cam, n, policy), edges) for n in range(image_cam.classes)
    ]
    claimed = np.stack([m.bits for m in per_class])
    if conflict is Conflict.ARGMAX:
        # unclaimed classes get -1 so they never win; argmax picks the lowest index on ties
        scores = np.where(claimed, image_cam.planes, np.float32(-1.0))
        winner = np.argmax(scores, axis=0)
    else:
        winner = np.argmax(claimed, axis=0)
    combined = np.where(claimed.any(axis=0), winner + 1, 0)
    return RefinedMask(per_class, LabelMap(combined))
