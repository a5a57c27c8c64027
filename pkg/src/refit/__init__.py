"""Weakly supervised mask refinement by fitting class response maps to superpixel boundaries."""

from .boundary_fit import Conflict, RefinedMask, ThresholdMode, ThresholdPolicy, binarize, boundary_fit, refine
from .edgemap import EdgeMap, build_edge_map
from .metrics import ConfusionCounts, MetricsReport, blank_baseline, confusion, dsc, evaluate_batch, miou
from .raster_io import (
    BinaryMask,
    LabelMap,
    Raster,
    ResponseMap,
    load_image,
    load_label_map,
    load_mask,
    load_response_map,
    save_image,
    save_label_map,
    save_mask,
    save_response_map,
)
from .superpixels import (
    MergeParams,
    QuickshiftParams,
    SearchSpace,
    SlicParams,
    grid_search,
    merge_regions,
    quickshift,
    segment,
    slic,
)

__version__ = "0.1.0"
