"""Edge maps: a region partition plus the boundary pixels that close each region."""

from __future__ import annotations

from dataclasses import dataclass

from ._grid import boundary_pixels
from .errors import DimensionMismatch
from .raster_io import BinaryMask, LabelMap


@dataclass(frozen=True)
class EdgeMap:
    regions: LabelMap
    boundary: BinaryMask

    def __post_init__(self):
        if self.regions.shape != self.boundary.shape:
            raise DimensionMismatch(
                f"regions {self.regions.shape} and boundary {self.boundary.shape} differ"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.regions.shape


def build_edge_map(labels: LabelMap, border_is_edge: bool = True) -> EdgeMap:
    """Mark every pixel with a differently labelled 4-neighbour as boundary.

    With ``border_is_edge`` the outermost rows and columns are marked too, so
    each region is closed either by boundary pixels or by the image frame.
    Boundary pixels keep their own region label; the mask is an overlay.
    """
    return EdgeMap(labels, BinaryMask(boundary_pixels(labels.labels, border_is_edge)))
