"""Raster value types: RGB images and per-pixel class-id masks.

Both types are thin, validated wrappers over numpy arrays. They are treated
as immutable values after construction: the arrays are flagged read-only so
accidental in-place mutation fails loudly, and every transform returns a new
buffer.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ShapeMismatch


def _freeze(arr: np.ndarray) -> np.ndarray:
    # copy unconditionally: freezing a view in place would flip the caller's
    # own array read-only
    arr = np.array(arr, order="C", copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ImageBuffer:
    """An RGB raster, 8 bits per channel, shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeMismatch(f"expected (H, W, 3) pixel array, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeMismatch("image must be at least 1x1")
        if px.dtype != np.uint8:
            px = px.astype(np.uint8)
        object.__setattr__(self, "pixels", _freeze(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def filled(cls, height: int, width: int, color=(0, 0, 0)) -> "ImageBuffer":
        px = np.empty((height, width, 3), dtype=np.uint8)
        px[:] = np.asarray(color, dtype=np.uint8)
        return cls(px)

    @classmethod
    def open_png(cls, path) -> "ImageBuffer":
        with Image.open(path) as im:
            return cls(np.asarray(im.convert("RGB")))

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "ImageBuffer":
        with Image.open(io.BytesIO(data)) as im:
            return cls(np.asarray(im.convert("RGB")))

    def save_png(self, path) -> None:
        Image.fromarray(self.pixels, mode="RGB").save(path, format="PNG")

    def png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def resized(self, height: int, width: int) -> "ImageBuffer":
        """Bilinear resample to the given size."""
        im = Image.fromarray(self.pixels, mode="RGB")
        return ImageBuffer(np.asarray(im.resize((width, height), Image.BILINEAR)))

    def vstack(self, other: "ImageBuffer") -> "ImageBuffer":
        if other.width != self.width:
            raise ShapeMismatch("cannot stack images of different widths")
        return ImageBuffer(np.concatenate([self.pixels, other.pixels], axis=0))


@dataclass(frozen=True)
class ClassMask:
    """Per-pixel class ids, shape (height, width); id 0 is background."""

    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2:
            raise ShapeMismatch(f"expected (H, W) id array, got {ids.shape}")
        if ids.shape[0] < 1 or ids.shape[1] < 1:
            raise ShapeMismatch("mask must be at least 1x1")
        if ids.dtype != np.uint8:
            if ids.max(initial=0) > 255 or ids.min(initial=0) < 0:
                raise ValueError("class ids must fit in uint8")
            ids = ids.astype(np.uint8)
        object.__setattr__(self, "ids", _freeze(ids))

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]

    @classmethod
    def zeros(cls, height: int, width: int) -> "ClassMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "ClassMask":
        with Image.open(io.BytesIO(data)) as im:
            return cls(np.asarray(im.convert("L")))

    def png_bytes(self) -> bytes:
        """Lossless grayscale PNG of the raw id raster."""
        buf = io.BytesIO()
        Image.fromarray(self.ids, mode="L").save(buf, format="PNG")
        return buf.getvalue()

    def class_ids_present(self) -> list[int]:
        """Sorted non-background ids that appear in the mask."""
        return [int(c) for c in np.unique(self.ids) if c != 0]

    def binary(self, class_id: int) -> np.ndarray:
        """Boolean view selecting one class."""
        return self.ids == class_id

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.ids))

    def resized_nearest(self, height: int, width: int) -> "ClassMask":
        """Nearest-neighbor resample; never invents new class ids."""
        im = Image.fromarray(self.ids, mode="L")
        return ClassMask(np.asarray(im.resize((width, height), Image.NEAREST)))

    def same_shape(self, other) -> bool:
        return (self.height, self.width) == (other.height, other.width)


def require_same_shape(a, b, what="rasters"):
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeMismatch(
            f"{what} disagree in shape: {(a.height, a.width)} vs {(b.height, b.width)}"
        )
