"""Superpixel partitions: SLIC, Quickshift, mean-colour region merging and a
sample-based hyperparameter grid search.

Both clustering algorithms measure colour on a 0-100 scale (pixel values in
[0, 1] times ``COLOR_SCALE``) so that the usual compactness and Quickshift
parameter ranges apply. Region merging works on the raw [0, 1] values.

Every tie (equal distance or equal density) resolves toward the lowest
row-major pixel index or the lowest cluster index, so outputs are fully
deterministic.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ._grid import adjacent_pairs, boundary_pixels, compact_labels, components
from .errors import DimensionMismatch, EmptySpace, InvalidParams, KTooLarge, MisalignedInputs
from .raster_io import BinaryMask, LabelMap, Raster, ResponseMap

log = logging.getLogger(__name__)

COLOR_SCALE = 100.0


@dataclass(frozen=True)
class SlicParams:
    k: int = 100
    compactness: float = 10.0
    iterations: int = 10
    enforce_connectivity: bool = True
    min_region_frac: float = 0.25

    def __post_init__(self):
        if self.k < 1:
            raise InvalidParams(f"k must be >= 1, got {self.k}")
        if not self.compactness > 0:
            raise InvalidParams(f"compactness must be > 0, got {self.compactness}")
        if self.iterations < 1:
            raise InvalidParams(f"iterations must be >= 1, got {self.iterations}")
        if not 0 < self.min_region_frac < 1:
            raise InvalidParams(f"min_region_frac must lie in (0, 1), got {self.min_region_frac}")


@dataclass(frozen=True)
class QuickshiftParams:
    kernel_size: float = 3.0
    max_dist: float = 6.0
    ratio: float = 0.5

    def __post_init__(self):
        if not self.kernel_size > 0:
            raise InvalidParams(f"kernel_size must be > 0, got {self.kernel_size}")
        if not self.max_dist > 0:
            raise InvalidParams(f"max_dist must be > 0, got {self.max_dist}")
        if not 0 < self.ratio <= 1:
            raise InvalidParams(f"ratio must lie in (0, 1], got {self.ratio}")


@dataclass(frozen=True)
class MergeParams:
    color_threshold: float = 0.1

    def __post_init__(self):
        if not self.color_threshold >= 0:
            raise InvalidParams(f"color_threshold must be >= 0, got {self.color_threshold}")


# --- SLIC -------------------------------------------------------------------


def _grid_shape(height: int, width: int, k: int) -> tuple[int, int]:
    """Seed grid with at most k cells, close to k in count and square in shape."""
    best = None
    for ny in range(1, min(height, k) + 1):
        nx = min(width, k // ny)
        if nx < 1:
            break
        cost = abs(math.log(ny * nx / k)) + abs(math.log((height / ny) / (width / nx)))
        key = (round(cost, 12), -nx)
        if best is None or key < best[0]:
            best = (key, (ny, nx))
    return best[1]


def _gradient_energy(feats: np.ndarray) -> np.ndarray:
    p = np.pad(feats, ((1, 1), (1, 1), (0, 0)), mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    return (gx**2).sum(-1) + (gy**2).sum(-1)


def _seed_centers(feats: np.ndarray, k: int) -> np.ndarray:
    h, w, _ = feats.shape
    ny, nx = _grid_shape(h, w, k)
    grad = _gradient_energy(feats)
    ys = ((np.arange(ny) + 0.5) * h / ny).astype(int)
    xs = ((np.arange(nx) + 0.5) * w / nx).astype(int)
    centers = []
    for y in ys:
        for x in xs:
            y0, x0 = max(y - 1, 0), max(x - 1, 0)
            win = grad[y0:min(y + 2, h), x0:min(x + 2, w)]
            # argmin scans row-major, so ties go to the lowest pixel index
            dy, dx = np.unravel_index(np.argmin(win), win.shape)
            cy, cx = y0 + dy, x0 + dx
            centers.append(np.concatenate([feats[cy, cx], [cy, cx]]))
    return np.asarray(centers, dtype=np.float64)


def _assign(feats, centers, step, compactness, yy, xx):
    h, w, c = feats.shape
    spatial_w = (compactness / step) ** 2
    dist = np.full((h, w), np.inf)
    lab = np.full((h, w), -1, dtype=np.int64)
    r = max(1, int(math.ceil(step)))
    for i, center in enumerate(centers):
        cy, cx = center[c], center[c + 1]
        y0, y1 = max(int(math.floor(cy)) - r, 0), min(int(math.ceil(cy)) + r + 1, h)
        x0, x1 = max(int(math.floor(cx)) - r, 0), min(int(math.ceil(cx)) + r + 1, w)
        if y0 >= y1 or x0 >= x1:
            continue
        dc = ((feats[y0:y1, x0:x1] - center[:c]) ** 2).sum(-1)
        ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
        d = dc + ds * spatial_w
        sub = dist[y0:y1, x0:x1]
        better = d < sub
        sub[better] = d[better]
        lab[y0:y1, x0:x1][better] = i
    orphan = lab < 0
    if orphan.any():
        f = feats[orphan]
        pos = np.stack([yy[orphan], xx[orphan]], axis=1)
        dc = ((f[:, None, :] - centers[None, :, :c]) ** 2).sum(-1)
        ds = ((pos[:, None, :] - centers[None, :, c:]) ** 2).sum(-1)
        lab[orphan] = np.argmin(dc + ds * spatial_w, axis=1)
    return lab


def _update_centers(feats, lab, centers, yy, xx):
    c = feats.shape[2]
    n = centers.shape[0]
    flat = lab.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    cols = [feats[:, :, ch].ravel() for ch in range(c)] + [yy.ravel(), xx.ravel()]
    sums = np.stack([np.bincount(flat, weights=v, minlength=n) for v in cols], axis=1)
    out = centers.copy()
    used = counts > 0
    out[used] = sums[used] / counts[used, None]
    return out


def enforce_connectivity(labels: np.ndarray, min_size: float) -> np.ndarray:
    """Make every label a single 4-connected component without adding labels.

    Each label keeps its largest component when that component has at least
    ``min_size`` pixels. Every other component is absorbed into the already
    settled neighbour it shares the longest border with.
    """
    comp = components(labels)
    ncomp = int(comp.max()) + 1
    sizes = np.bincount(comp.ravel(), minlength=ncomp)
    _, first = np.unique(comp.ravel(), return_index=True)
    comp_label = labels.ravel()[first]

    owner = np.full(ncomp, -1, dtype=np.int64)
    order = np.lexsort((np.arange(ncomp), -sizes))
    seen = set()
    for ci in order:
        lbl = int(comp_label[ci])
        if lbl in seen:
            continue
        seen.add(lbl)
        if sizes[ci] >= min_size:
            owner[ci] = ci
    if not (owner >= 0).any():
        owner[order[0]] = order[0]

    pairs, contact = adjacent_pairs(comp)
    while (owner < 0).any():
        a, b = pairs[:, 0], pairs[:, 1]
        oa, ob = owner[a], owner[b]
        m1 = (oa < 0) & (ob >= 0)
        m2 = (ob < 0) & (oa >= 0)
        cand = np.concatenate([
            np.stack([a[m1], ob[m1], contact[m1]], axis=1),
            np.stack([b[m2], oa[m2], contact[m2]], axis=1),
        ])
        if cand.size == 0:
            break
        keys, inv = np.unique(cand[:, :2], axis=0, return_inverse=True)
        total = np.bincount(inv.ravel(), weights=cand[:, 2])
        # most contact first, then lowest owner id
        pick = np.lexsort((keys[:, 1], -total, keys[:, 0]))
        chosen = {}
        for idx in pick:
            u = int(keys[idx, 0])
            if u not in chosen:
                chosen[u] = int(keys[idx, 1])
        for u, o in chosen.items():
            owner[u] = o
    return owner[comp]


def slic(image: Raster, params: SlicParams = SlicParams()) -> LabelMap:
    """Localized k-means in joint colour/position space.

    Distance is ``sqrt(d_color**2 + (d_xy / S)**2 * compactness**2)`` with grid
    step ``S = sqrt(N / k)``. Seeds sit on a regular grid and are nudged to the
    lowest-gradient pixel of their 3x3 neighbourhood.
    """
    h, w = image.shape
    n = h * w
    if params.k > n:
        raise KTooLarge(f"k={params.k} exceeds the {n} pixels of a {w}x{h} image")
    feats = image.data * COLOR_SCALE
    step = math.sqrt(n / params.k)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    centers = _seed_centers(feats, params.k)
    lab = None
    for it in range(params.iterations):
        lab = _assign(feats, centers, step, params.compactness, yy, xx)
        if it + 1 < params.iterations:
            centers = _update_centers(feats, lab, centers, yy, xx)
    if params.enforce_connectivity:
        lab = enforce_connectivity(lab, params.min_region_frac * n / params.k)
    return LabelMap(compact_labels(lab))


# --- Quickshift -------------------------------------------------------------


def _offset_views(h, w, dy, dx):
    """Slices (source, neighbour) pairing pixel (y, x) with (y + dy, x + dx)."""
    sy = slice(max(0, -dy), min(h, h - dy))
    sx = slice(max(0, -dx), min(w, w - dx))
    ty = slice(max(0, dy), min(h, h + dy))
    tx = slice(max(0, dx), min(w, w + dx))
    return (sy, sx), (ty, tx)


def _sq_dist(feats, src, dst, dy, dx):
    a, b = feats[src], feats[dst]
    d2 = (a[:, :, 0] - b[:, :, 0]) ** 2
    for ch in range(1, feats.shape[2]):
        d2 += (a[:, :, ch] - b[:, :, ch]) ** 2
    d2 += float(dy * dy)
    d2 += float(dx * dx)
    return d2


def quickshift_features(image: Raster, ratio: float) -> np.ndarray:
    return np.ascontiguousarray(image.data * (ratio * COLOR_SCALE))


def quickshift_density(image: Raster, params: QuickshiftParams) -> np.ndarray:
    """Gaussian kernel density over a (2*ceil(3*sigma)+1)**2 spatial window.

    Terms are accumulated in row-major neighbour order for every pixel.
    """
    feats = quickshift_features(image, params.ratio)
    h, w = image.shape
    radius = int(math.ceil(3 * params.kernel_size))
    two_sigma_sq = 2.0 * params.kernel_size * params.kernel_size
    dens = np.zeros((h, w))
    for dy in range(-min(radius, h - 1), min(radius, h - 1) + 1):
        for dx in range(-min(radius, w - 1), min(radius, w - 1) + 1):
            src, dst = _offset_views(h, w, dy, dx)
            d2 = _sq_dist(feats, src, dst, dy, dx)
            dens[src] += np.exp(-d2 / two_sigma_sq)
    return dens


def quickshift_forest(image: Raster, params: QuickshiftParams) -> tuple[np.ndarray, np.ndarray]:
    """Return (density, parent) with parent as flat row-major indices.

    A pixel's parent is its nearest neighbour, within ``max_dist`` in the
    ratio-weighted feature space, that ranks higher by (density, then lower
    row-major index). Pixels without one are their own parent.
    """
    feats = quickshift_features(image, params.ratio)
    h, w = image.shape
    dens = quickshift_density(image, params)
    own = np.arange(h * w, dtype=np.int64).reshape(h, w)
    parent = own.copy()
    best = np.full((h, w), np.inf)
    reach = int(math.floor(params.max_dist))
    ry, rx = min(reach, h - 1), min(reach, w - 1)
    for dy in range(-ry, ry + 1):
        for dx in range(-rx, rx + 1):
            if (dy == 0 and dx == 0) or math.sqrt(dy * dy + dx * dx) > params.max_dist:
                continue
            src, dst = _offset_views(h, w, dy, dx)
            d2 = _sq_dist(feats, src, dst, dy, dx)
            di, dj = dens[src], dens[dst]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            higher = dj >= di if earlier else dj > di
            ok = higher & (np.sqrt(d2) <= params.max_dist) & (d2 < best[src])
            if not ok.any():
                continue
            best[src] = np.where(ok, d2, best[src])
            parent[src] = np.where(ok, own[src] + dy * w + dx, parent[src])
    return dens, parent.ravel()


def _roots(parent: np.ndarray) -> np.ndarray:
    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            return root
        root = nxt


def quickshift(image: Raster, params: QuickshiftParams = QuickshiftParams()) -> LabelMap:
    _, parent = quickshift_forest(image, params)
    return LabelMap(compact_labels(_roots(parent).reshape(image.shape)))


# --- region merging ---------------------------------------------------------


def merge_regions(image: Raster, labels: LabelMap,
                  params: MergeParams = MergeParams()) -> LabelMap:
    """Greedily merge the closest adjacent pair by mean colour while within threshold.

    Distances are Euclidean over channels in [0, 1] units. Equal distances
    merge the pair with the lowest label ids first; the merged region keeps
    the lower id. A zero threshold returns the compacted input unchanged.
    """
    if labels.shape != image.shape:
        raise DimensionMismatch(f"labels {labels.shape} vs image {image.shape}")
    lab = compact_labels(labels.labels)
    if params.color_threshold == 0:
        return LabelMap(lab)
    n = int(lab.max()) + 1
    flat = lab.ravel()
    counts = np.bincount(flat, minlength=n).astype(np.float64)
    sums = np.stack(
        [np.bincount(flat, weights=image.data[:, :, c].ravel(), minlength=n)
         for c in range(image.channels)], axis=1)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    pairs, _ = adjacent_pairs(lab)
    for a, b in pairs.tolist():
        nbrs[a].add(b)
        nbrs[b].add(a)

    means = [tuple((sums[i] / counts[i]).tolist()) for i in range(n)]

    def dist(a, b):
        return math.dist(means[a], means[b])

    version = [0] * n
    alive = [True] * n
    heap = [(dist(a, b), a, b, 0, 0) for a, b in pairs.tolist()]
    heapq.heapify(heap)
    merged_into = np.arange(n)
    while heap:
        d, a, b, va, vb = heapq.heappop(heap)
        if d > params.color_threshold:
            break
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        sums[a] += sums[b]
        counts[a] += counts[b]
        means[a] = tuple((sums[a] / counts[a]).tolist())
        alive[b] = False
        merged_into[merged_into == b] = a
        version[a] += 1
        nbrs[a] |= nbrs[b]
        nbrs[a] -= {a, b}
        for m in nbrs[b]:
            nbrs[m].discard(b)
            if m != a:
                nbrs[m].add(a)
        nbrs[b] = set()
        for m in nbrs[a]:
            lo, hi = min(a, m), max(a, m)
            heapq.heappush(heap, (dist(lo, hi), lo, hi, version[lo], version[hi]))
    return LabelMap(compact_labels(merged_into[lab]))


def segment(image: Raster, algo: str = "slic", slic_params: SlicParams = SlicParams(),
            quickshift_params: QuickshiftParams = QuickshiftParams(),
            merge_params: MergeParams = MergeParams()) -> LabelMap:
    """Superpixels for ``algo`` followed by region merging."""
    if algo == "slic":
        labels = slic(image, slic_params)
    elif algo == "quickshift":
        labels = quickshift(image, quickshift_params)
    else:
        raise InvalidParams(f"unknown algorithm {algo!r}")
    return merge_regions(image, labels, merge_params)


# --- grid search ------------------------------------------------------------

_ALGO_KEYS = {
    "slic": ("k", "compactness", "color_threshold"),
    "quickshift": ("kernel_size", "max_dist", "ratio", "color_threshold"),
}


@dataclass(frozen=True)
class SearchSpace:
    k: Sequence[int] = (50, 100, 200)
    compactness: Sequence[float] = (5.0, 10.0, 20.0)
    kernel_size: Sequence[float] = (2.0, 3.0, 5.0)
    max_dist: Sequence[float] = (4.0, 6.0, 10.0)
    ratio: Sequence[float] = (0.5, 1.0)
    color_threshold: Sequence[float] = (0.0, 0.05, 0.1)
    sample_size: int = 100

    def __post_init__(self):
        for key in ("k", "compactness", "kernel_size", "max_dist", "ratio", "color_threshold"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if self.sample_size < 1:
            raise InvalidParams(f"sample_size must be >= 1, got {self.sample_size}")

    def combinations(self, algo: str) -> list[dict]:
        if algo not in _ALGO_KEYS:
            raise InvalidParams(f"unknown algorithm {algo!r}")
        keys = _ALGO_KEYS[algo]
        lists = [getattr(self, key) for key in keys]
        empty = [key for key, values in zip(keys, lists) if not values]
        if empty:
            raise EmptySpace(f"no candidate values for {', '.join(empty)}")
        return [dict(zip(keys, combo)) for combo in itertools.product(*lists)]


@dataclass
class SearchResult:
    best: dict
    best_score: float
    table: list[dict] = field(default_factory=list)
    sample: list[int] = field(default_factory=list)
    objective: str = "dsc"

    def to_json(self) -> str:
        doc = {
            "best": {"params": self.best, "score": self.best_score},
            "objective": self.objective,
            "sample": self.sample,
            "table": self.table,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def boundary_recall(image: Raster, labels: LabelMap) -> float:
    """Share of total image gradient magnitude lying on region boundary pixels."""
    gy, gx = np.gradient(image.gray())
    mag = np.hypot(gy, gx)
    total = float(mag.sum())
    if total == 0.0:
        return 1.0
    return float(mag[boundary_pixels(labels.labels)].sum()) / total


def sample_indices(n: int, sample_size: int, seed: int) -> list[int]:
    m = min(sample_size, n)
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n, size=m, replace=False))


def _params_for(algo: str, combo: dict, slic_base: SlicParams,
                qs_base: QuickshiftParams) -> tuple[SlicParams, QuickshiftParams, MergeParams]:
    merge = MergeParams(combo["color_threshold"])
    if algo == "slic":
        return replace(slic_base, k=combo["k"], compactness=combo["compactness"]), qs_base, merge
    qs = QuickshiftParams(combo["kernel_size"], combo["max_dist"], combo["ratio"])
    return slic_base, qs, merge


def grid_search(
    images: Sequence[Raster],
    space: SearchSpace,
    algo: str = "slic",
    gts: Sequence[BinaryMask] | None = None,
    cams: Sequence[ResponseMap] | None = None,
    *,
    policy=None,
    conflict: str = "argmax",
    border_is_edge: bool = True,
    slic_base: SlicParams = SlicParams(),
    quickshift_base: QuickshiftParams = QuickshiftParams(),
    seed: int = 0,
    workers: int = 1,
) -> SearchResult:
    """Score every combination of ``space`` on a seeded sample of the images.

    With ground truths and response maps the score is the mean Dice of the
    refined masks; otherwise it is the mean boundary recall of the partition.
    The first-enumerated combination wins ties.
    """
    from .boundary_fit import ThresholdPolicy, refine
    from .edgemap import build_edge_map
    from .metrics import dsc

    if not images:
        raise MisalignedInputs("grid search needs at least one image")
    if gts is not None and len(gts) != len(images):
        raise MisalignedInputs(f"{len(images)} images but {len(gts)} ground truths")
    if cams is not None and len(cams) != len(images):
        raise MisalignedInputs(f"{len(images)} images but {len(cams)} response maps")
    end_to_end = gts is not None and cams is not None
    policy = policy or ThresholdPolicy()
    combos = space.combinations(algo)
    sample = sample_indices(len(images), space.sample_size, seed)

    def score(job):
        ci, idx = job
        s, q, m = _params_for(algo, combos[ci], slic_base, quickshift_base)
        labels = segment(images[idx], algo, s, q, m)
        if not end_to_end:
            return boundary_recall(images[idx], labels)
        refined = refine(cams[idx], build_edge_map(labels, border_is_edge), policy, conflict)
        return dsc(refined.foreground(), gts[idx])

    jobs = [(ci, idx) for ci in range(len(combos)) for idx in sample]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, jobs))
    else:
        scores = [score(job) for job in jobs]

    table = []
    per = len(sample)
    for ci, combo in enumerate(combos):
        vals = scores[ci * per:(ci + 1) * per]
        table.append({"params": dict(combo), "score": math.fsum(vals) / per})
        log.debug("combo %s -> %.6f", combo, table[-1]["score"])
    best_i = max(range(len(table)), key=lambda i: (table[i]["score"], -i))
    return SearchResult(
        best=dict(combos[best_i]),
        best_score=table[best_i]["score"],
        table=table,
        sample=sample,
        objective="dsc" if end_to_end else "boundary_recall",
    )


__all__ = [
    "COLOR_SCALE", "SlicParams", "QuickshiftParams", "MergeParams", "SearchSpace",
    "SearchResult", "slic", "quickshift", "quickshift_forest", "quickshift_density",
    "merge_regions", "segment", "grid_search", "boundary_recall", "enforce_connectivity",
    "sample_indices",
]
