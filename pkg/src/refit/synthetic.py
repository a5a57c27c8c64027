"""Synthetic lesion phantoms with over-covering response maps.

Each phantom is a bright disk or ellipse on a darker noisy background. Its
response map covers the lesion dilated by a few pixels, and the cut-off
contour is jittered by smooth noise concentrated near the response border,
the way class activation maps bleed into the surrounding tissue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster_io import BinaryMask, Raster, ResponseMap


@dataclass(frozen=True)
class Phantom:
    image: Raster
    gt: BinaryMask
    cam: ResponseMap
    dilation: int


def ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def make_phantom(rng: np.random.Generator, size: int = 128, noise: float = 0.04) -> Phantom:
    ry = rng.uniform(0.10, 0.24) * size
    rx = ry * rng.uniform(0.6, 1.0) if rng.random() < 0.6 else ry
    margin = max(ry, rx) + 10
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    gt = ellipse_mask(size, cy, cx, ry, rx, rng.uniform(0, np.pi))

    fg, bg = rng.uniform(0.55, 0.75), rng.uniform(0.15, 0.35)
    img = np.where(gt, fg, bg) + rng.normal(0.0, noise, (size, size))
    img = np.clip(img, 0.0, 1.0)

    r = int(rng.integers(3, 8))
    dist = ndimage.distance_transform_edt(~gt)
    cam = np.clip(0.9 - 0.4 * dist / r, 0.0, 1.0)
    jitter = ndimage.gaussian_filter(rng.normal(0.0, 1.0, (size, size)), 2.0)
    jitter *= 0.08 / max(float(np.abs(jitter).max()), 1e-12)
    hug = np.exp(-(((dist - r) / 2.0) ** 2))
    cam = np.clip(cam + jitter * hug, 0.0, 1.0)
    return Phantom(Raster(img), BinaryMask(gt), ResponseMap(cam[None]), r)


def make_phantoms(n: int, seed: int = 0, size: int = 128) -> list[Phantom]:
    rng = np.random.default_rng(seed)
    return [make_phantom(rng, size) for _ in range(n)]
