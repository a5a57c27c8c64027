"""Small label-grid primitives shared by the segmentation modules."""

from __future__ import annotations

import numpy as np
from skimage.measure import label as _cc_label


def compact_labels(labels: np.ndarray) -> np.ndarray:
    """Renumber labels to 0..m-1 in order of first row-major appearance."""
    flat = labels.ravel()
    uniq, first, inverse = np.unique(flat, return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(uniq.size)
    return rank[inverse].reshape(labels.shape)


def components(labels: np.ndarray) -> np.ndarray:
    """4-connected components of equal-label pixels, numbered 0..c-1 in row-major order."""
    cc = _cc_label(np.asarray(labels) + 1, background=0, connectivity=1)
    return cc.astype(np.int64) - 1


def adjacent_pairs(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unordered 4-neighbour pairs (a < b) of differing labels, with contact counts."""
    h = np.stack([labels[:, :-1].ravel(), labels[:, 1:].ravel()], axis=1)
    v = np.stack([labels[:-1, :].ravel(), labels[1:, :].ravel()], axis=1)
    pairs = np.concatenate([h, v])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    if pairs.size == 0:
        return np.empty((0, 2), dtype=np.int64), np.empty(0, dtype=np.int64)
    pairs.sort(axis=1)
    uniq, counts = np.unique(pairs, axis=0, return_counts=True)
    return uniq.astype(np.int64), counts.astype(np.int64)


def boundary_pixels(labels: np.ndarray, border_is_edge: bool = False) -> np.ndarray:
    """True where a 4-neighbour carries a different label (or on the frame, if asked)."""
    out = np.zeros(labels.shape, dtype=bool)
    dh = labels[:, :-1] != labels[:, 1:]
    dv = labels[:-1, :] != labels[1:, :]
    out[:, :-1] |= dh
    out[:, 1:] |= dh
    out[:-1, :] |= dv
    out[1:, :] |= dv
    if border_is_edge:
        out[0, :] = out[-1, :] = True
        out[:, 0] = out[:, -1] = True
    return out
