"""Raster containers and their on-disk formats.

Images are read from 8-bit PNG or PGM and scaled to [0, 1]. Binary masks are
8-bit gray PNGs holding only 0 and 255, label maps are 16-bit gray PNGs, and
class response maps use the little-endian RFM container::

    b"RFM1" | u32 width | u32 height | u32 classes | f32[classes][height][width]

All containers hold read-only numpy arrays, so loaded artifacts can be shared
between threads freely.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    BadMagic,
    CorruptFile,
    DimensionMismatch,
    InvalidParams,
    IoFailure,
    NonBinaryPixel,
    NotFound,
    RangeViolation,
    TooManyLabels,
    UnsupportedFormat,
)

RFM_MAGIC = b"RFM1"
RFM_HEADER = struct.Struct("<4sIII")
RANGE_TOLERANCE = 1e-6
MAX_LABELS = 65536
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNM_MAGICS = (b"P2", b"P5", b"P3", b"P6")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Raster:
    """An H x W image with 1 or 3 channels of finite reals, stored (H, W, C)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise DimensionMismatch(f"raster must be (H, W) or (H, W, 1|3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch("raster must be at least 1x1")
        if not np.all(np.isfinite(data)):
            raise RangeViolation("raster contains non-finite values")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[:2]

    def gray(self) -> np.ndarray:
        """Single-plane view; RGB uses 0.299R + 0.587G + 0.114B."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ np.asarray(LUMA_WEIGHTS)

    def __eq__(self, other):
        return isinstance(other, Raster) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class ResponseMap:
    """Per-class activation planes in [0, 1], stored (classes, H, W) as float32."""

    planes: np.ndarray

    def __post_init__(self):
        planes = np.asarray(self.planes, dtype=np.float32)
        if planes.ndim == 2:
            planes = planes[None]
        if planes.ndim != 3 or min(planes.shape) < 1:
            raise DimensionMismatch(f"response map must be (classes, H, W), got {planes.shape}")
        planes = _check_unit_range(planes)
        object.__setattr__(self, "planes", _frozen(planes))

    @property
    def classes(self) -> int:
        return self.planes.shape[0]

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.planes.shape[1:]

    def __eq__(self, other):
        return isinstance(other, ResponseMap) and np.array_equal(self.planes, other.planes)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A per-pixel {0, 1} mask stored as a boolean (H, W) array."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or min(bits.shape) < 1:
            raise DimensionMismatch(f"mask must be a non-empty 2-D grid, got {bits.shape}")
        if bits.dtype != bool:
            if not np.all((bits == 0) | (bits == 1)):
                raise NonBinaryPixel("mask values must be exactly 0 or 1")
            bits = bits.astype(bool)
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other):
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    @classmethod
    def zeros(cls, height: int, width: int) -> BinaryMask:
        return cls(np.zeros((height, width), dtype=bool))


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Non-negative integer labels on an (H, W) grid.

    ``label_count`` is ``max + 1``; it equals the number of distinct labels
    once the map is compacted.
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or min(labels.shape) < 1:
            raise DimensionMismatch(f"label map must be a non-empty 2-D grid, got {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InvalidParams("labels must be integers")
        labels = labels.astype(np.int64)
        if labels.min() < 0:
            raise InvalidParams("labels must be non-negative")
        object.__setattr__(self, "labels", _frozen(labels))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def label_count(self) -> int:
        return int(self.labels.max()) + 1

    def distinct(self) -> int:
        return int(np.unique(self.labels).size)

    def compacted(self) -> LabelMap:
        from ._grid import compact_labels

        return LabelMap(compact_labels(self.labels))

    def __eq__(self, other):
        return isinstance(other, LabelMap) and np.array_equal(self.labels, other.labels)


def _check_unit_range(values: np.ndarray) -> np.ndarray:
    if np.isnan(values).any():
        raise RangeViolation("response values contain NaN")
    lo, hi = float(values.min()), float(values.max())
    if lo < -RANGE_TOLERANCE or hi > 1.0 + RANGE_TOLERANCE:
        raise RangeViolation(f"response values span [{lo}, {hi}], outside [0, 1]")
    if lo < 0.0 or hi > 1.0:
        values = np.clip(values, 0.0, 1.0)
    return values


# --- file helpers -----------------------------------------------------------


def atomic_write(path: str | os.PathLike, payload: bytes) -> None:
    """Write bytes through a temp file in the target directory, then rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_bytes(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"no such file: {path}")
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _decode(path) -> Image.Image:
    raw = _read_bytes(path)
    known = raw.startswith(_PNG_SIGNATURE) or raw[:2] in _PNM_MAGICS
    if not known:
        raise UnsupportedFormat(f"{path}: not a PNG or PGM file")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError, struct.error) as exc:
        raise CorruptFile(f"{path}: {exc}") from exc
    return img


def _encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


# --- images -----------------------------------------------------------------


def load_image(path) -> Raster:
    """Read an 8-bit gray/RGB PNG or a P2/P5 PGM, scaled to [0, 1]."""
    img = _decode(path)
    if img.mode in ("1", "L", "LA"):
        img = img.convert("L")
    elif img.mode in ("RGB", "RGBA", "P"):
        img = img.convert("RGB")
    else:
        raise UnsupportedFormat(f"{path}: unsupported pixel mode {img.mode!r}")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return Raster(arr)


def save_image(raster: Raster, path) -> None:
    """Write a raster as an 8-bit PNG (values are clipped to [0, 1] and rounded)."""
    arr = np.clip(np.rint(raster.data * 255.0), 0, 255).astype(np.uint8)
    if raster.channels == 1:
        arr = arr[:, :, 0]
    atomic_write(path, _encode_png(arr))


# --- response maps ----------------------------------------------------------


def encode_response_map(rmap: ResponseMap) -> bytes:
    header = RFM_HEADER.pack(RFM_MAGIC, rmap.width, rmap.height, rmap.classes)
    return header + rmap.planes.astype("<f4").tobytes(order="C")


def decode_response_map(raw: bytes, source: str = "<bytes>") -> ResponseMap:
    if len(raw) < RFM_HEADER.size or raw[:4] != RFM_MAGIC:
        raise BadMagic(f"{source}: missing RFM1 header")
    _, width, height, classes = RFM_HEADER.unpack_from(raw)
    if width < 1 or height < 1 or classes < 1:
        raise DimensionMismatch(f"{source}: zero dimension in header ({width}x{height}x{classes})")
    expected = width * height * classes * 4
    payload = len(raw) - RFM_HEADER.size
    if payload != expected:
        raise DimensionMismatch(f"{source}: header promises {expected} data bytes, file has {payload}")
    values = np.frombuffer(raw, dtype="<f4", offset=RFM_HEADER.size)
    values = values.reshape(classes, height, width).astype(np.float32)
    try:
        return ResponseMap(values)
    except RangeViolation as exc:
        raise RangeViolation(f"{source}: {exc}") from None


def load_response_map(path) -> ResponseMap:
    return decode_response_map(_read_bytes(path), str(path))


def save_response_map(rmap: ResponseMap, path) -> None:
    atomic_write(path, encode_response_map(rmap))


# --- masks ------------------------------------------------------------------


def save_mask(mask: BinaryMask, path) -> None:
    atomic_write(path, _encode_png(np.where(mask.bits, 255, 0).astype(np.uint8)))


def load_mask(path) -> BinaryMask:
    img = _decode(path)
    if img.mode == "1":
        img = img.convert("L")
    if img.mode != "L":
        raise UnsupportedFormat(f"{path}: masks must be 8-bit gray, got mode {img.mode!r}")
    arr = np.asarray(img)
    bad = (arr != 0) & (arr != 255)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise NonBinaryPixel(f"{path}: pixel ({x}, {y}) has value {arr[y, x]}")
    return BinaryMask(arr == 255)


# --- label maps -------------------------------------------------------------


def save_label_map(labels: LabelMap, path) -> None:
    if labels.label_count > MAX_LABELS:
        raise TooManyLabels(f"{labels.label_count} labels exceed the 16-bit limit of {MAX_LABELS}")
    atomic_write(path, _encode_png(labels.labels.astype(np.uint16)))


def load_label_map(path) -> LabelMap:
    img = _decode(path)
    if img.mode not in ("L", "I", "I;16"):
        raise UnsupportedFormat(f"{path}: label maps must be gray, got mode {img.mode!r}")
    return LabelMap(np.asarray(img).astype(np.int64))
