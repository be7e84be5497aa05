"""Raster and geometry primitives plus PNG/PFM file I/O.

Coordinates follow the (u, v) = (column, row) convention with the origin at
the top-left pixel.  ``v_bottom`` of a box is the numerically smaller row.
A pixel's center sits at integer coordinates (u, v).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

PathLike = Union[str, Path]


class ImageFormatError(ValueError):
    """Raised when an image or map file cannot be decoded."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGB image stored as an (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        """(width, height)."""
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True, eq=False)
class FloatMap:
    """Per-pixel probability map, (height, width) float64 with values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2-D map, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("map contains non-finite values")
        if vals.min() < 0.0 or vals.max() > 1.0:
            raise ValueError("map values must lie in [0, 1]")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FloatMap":
        return cls(np.zeros((height, width)))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, FloatMap):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class PixelPoint:
    u: int
    v: int


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box; ``v_bottom`` is the smaller row index."""

    u_left: int
    v_bottom: int
    u_right: int
    v_top: int

    def __post_init__(self):
        if self.u_left > self.u_right or self.v_bottom > self.v_top:
            raise ValueError(f"inverted box {self.as_tuple()}")

    @property
    def width(self) -> int:
        return self.u_right - self.u_left + 1

    @property
    def height(self) -> int:
        return self.v_top - self.v_bottom + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.u_left, self.v_bottom, self.u_right, self.v_top)

    def slices(self) -> tuple[slice, slice]:
        """Row/column slices selecting the box from an (H, W, ...) array."""
        return (slice(self.v_bottom, self.v_top + 1), slice(self.u_left, self.u_right + 1))

    def contains_box(self, other: "BoundingBox") -> bool:
        return (self.u_left <= other.u_left and self.v_bottom <= other.v_bottom
                and self.u_right >= other.u_right and self.v_top >= other.v_top)

    def contains_point(self, u: float, v: float, margin: float = 0.0) -> bool:
        return (self.u_left - margin <= u <= self.u_right + margin
                and self.v_bottom - margin <= v <= self.v_top + margin)

    def intersection(self, other: "BoundingBox") -> "BoundingBox | None":
        ul = max(self.u_left, other.u_left)
        vb = max(self.v_bottom, other.v_bottom)
        ur = min(self.u_right, other.u_right)
        vt = min(self.v_top, other.v_top)
        if ul > ur or vb > vt:
            return None
        return BoundingBox(ul, vb, ur, vt)

    def union_hull(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(min(self.u_left, other.u_left), min(self.v_bottom, other.v_bottom),
                           max(self.u_right, other.u_right), max(self.v_top, other.v_top))

    def inside(self, width: int, height: int) -> bool:
        return self.u_left >= 0 and self.v_bottom >= 0 and self.u_right < width and self.v_top < height


def bbox_of_pixels(points) -> BoundingBox:
    """Tightest inclusive box around a set of pixel points.

    Accepts an iterable of :class:`PixelPoint`, of ``(u, v)`` pairs, or an
    (N, 2) integer array of ``(u, v)`` rows.
    """
    if isinstance(points, np.ndarray):
        arr = points.reshape(-1, 2)
    else:
        arr = np.array([(p.u, p.v) if isinstance(p, PixelPoint) else tuple(p) for p in points])
    if arr.size == 0:
        raise ValueError("cannot bound an empty point set")
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    return BoundingBox(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))


def box_mask(boxes: Iterable[BoundingBox], width: int, height: int) -> np.ndarray:
    """Boolean (H, W) mask of the union of ``boxes``."""
    mask = np.zeros((height, width), dtype=bool)
    for box in boxes:
        mask[box.slices()] = True
    return mask


# --------------------------------------------------------------------------- PNG

def load_png(path: PathLike) -> RasterImage:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG file ({im.format})")
            if im.mode in ("I;16", "I;16B", "I;16L", "I", "F", "1"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {im.mode}")
            im.load()
            rgb = im.convert("RGB")
            return RasterImage(np.array(rgb, dtype=np.uint8))
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise ImageFormatError(f"{path}: {exc}") from exc


def save_png(image: RasterImage, path: PathLike) -> None:
    Image.fromarray(np.asarray(image.pixels)).save(Path(path), format="PNG")


def save_map_preview(fmap: FloatMap, path: PathLike) -> None:
    """8-bit grayscale rendering of a map, for eyeballing only."""
    gray = np.round(fmap.values * 255.0).astype(np.uint8)
    Image.fromarray(gray).save(Path(path), format="PNG")


# --------------------------------------------------------------------------- PFM
#
# Grayscale "Pf" files.  Rows are stored bottom-to-top as in the original PFM
# definition, and a negative scale marks little-endian float32 samples.

_PFM_HEADER = re.compile(rb"^(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s")


def write_pfm_array(values: np.ndarray, path: PathLike) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ValueError("PFM writer expects a 2-D array")
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot write non-finite values to PFM")
    height, width = arr.shape
    data = np.flipud(arr).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (width, height))
        fh.write(data.tobytes())


def read_pfm_array(path: PathLike) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    m = _PFM_HEADER.match(raw[:256])
    if m is None:
        raise ImageFormatError(f"{path}: malformed PFM header")
    tag, width, height, scale = m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
    if tag == b"PF":
        raise ImageFormatError(f"{path}: color PFM is not supported")
    try:
        scale_val = float(scale)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: bad PFM scale {scale!r}") from exc
    if scale_val == 0 or width < 1 or height < 1:
        raise ImageFormatError(f"{path}: malformed PFM header")
    dtype = "<f4" if scale_val < 0 else ">f4"
    body = raw[m.end():]
    expected = width * height * 4
    if len(body) != expected:
        raise ImageFormatError(f"{path}: expected {expected} data bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return np.flipud(arr).astype(np.float32)


def save_pfm(fmap: "FloatMap | np.ndarray", path: PathLike) -> None:
    """Write a map as float32 PFM.  Values are rounded to float32."""
    values = fmap.values if isinstance(fmap, FloatMap) else fmap
    write_pfm_array(values, path)


def load_pfm(path: PathLike) -> FloatMap:
    arr = read_pfm_array(path)
    try:
        return FloatMap(arr.astype(np.float64))
    except ValueError as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc

