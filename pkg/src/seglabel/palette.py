"""Class-id <-> color mapping.

Masks are stored and fed to the model as color renderings, so the palette is
the contract that makes renderings decodable: background is always black,
class colors are pairwise well separated, and decoding snaps each pixel to
the nearest palette color (falling back to background beyond a tolerance).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PaletteMismatch
from .rasters import ClassMask, ImageBuffer

BACKGROUND = (0, 0, 0)

# Defaults chosen together: colors at least 128 apart mean a decode tolerance
# of 64 can never be ambiguous between two class colors.
DEFAULT_SEPARATION = 128.0
DEFAULT_DECODE_TOL = 64.0


@dataclass(frozen=True)
class ColorPalette:
    """Ordered class-id -> RGB mapping. Index 0 is background black.

    `separation` records the minimum pairwise Euclidean distance the
    non-background colors are guaranteed to keep; construction fails if the
    colors do not honor it.
    """

    colors: tuple
    separation: float = DEFAULT_SEPARATION

    def __post_init__(self):
        colors = tuple(tuple(int(v) for v in c) for c in self.colors)
        if not colors or colors[0] != BACKGROUND:
            raise ValueError("palette must start with background (0,0,0)")
        for c in colors:
            if len(c) != 3 or any(v < 0 or v > 255 for v in c):
                raise ValueError(f"bad RGB triple {c}")
        fg = colors[1:]
        if len(set(fg)) != len(fg):
            raise ValueError("non-background colors must be pairwise distinct")
        if BACKGROUND in fg:
            raise ValueError("black is reserved for background")
        if len(fg) >= 2:
            arr = np.asarray(fg, dtype=np.float64)
            d2 = np.sum((arr[:, None, :] - arr[None, :, :]) ** 2, axis=-1)
            np.fill_diagonal(d2, np.inf)
            min_dist = float(np.sqrt(d2.min()))
            if min_dist < self.separation - 1e-9:
                raise ValueError(
                    f"min pairwise color distance {min_dist:.2f} below "
                    f"required separation {self.separation}"
                )
        object.__setattr__(self, "colors", colors)

    @classmethod
    def from_class_colors(cls, class_colors, separation=None) -> "ColorPalette":
        """Build from non-background colors; separation defaults to what they achieve."""
        colors = (BACKGROUND, *[tuple(c) for c in class_colors])
        if separation is None:
            separation = _min_pairwise_distance(class_colors)
        return cls(colors, separation=separation)

    @property
    def num_classes(self) -> int:
        """Class count, background included."""
        return len(self.colors)

    def color_of(self, class_id: int):
        if class_id < 0 or class_id >= len(self.colors):
            raise PaletteMismatch(f"no palette entry for class id {class_id}")
        return self.colors[class_id]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.colors, dtype=np.float64)

    def to_jsonable(self) -> dict:
        return {"colors": [list(c) for c in self.colors], "separation": self.separation}

    @classmethod
    def from_jsonable(cls, obj) -> "ColorPalette":
        return cls(tuple(tuple(c) for c in obj["colors"]), separation=obj["separation"])


def _min_pairwise_distance(colors) -> float:
    arr = np.asarray(list(colors), dtype=np.float64)
    if len(arr) < 2:
        return float("inf")
    d2 = np.sum((arr[:, None, :] - arr[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return float(np.sqrt(d2.min()))


def render_mask(mask: ClassMask, palette: ColorPalette) -> ImageBuffer:
    """Paint each class id with its palette color; background stays black."""
    max_id = int(mask.ids.max(initial=0))
    if max_id >= palette.num_classes:
        raise PaletteMismatch(
            f"mask contains class id {max_id} but palette has "
            f"{palette.num_classes - 1} class entries"
        )
    lut = np.asarray(palette.colors, dtype=np.uint8)
    return ImageBuffer(lut[mask.ids])


def decode_mask(rendered: ImageBuffer, palette: ColorPalette,
                tol: float | None = DEFAULT_DECODE_TOL) -> ClassMask:
    """Invert `render_mask`, tolerating bounded color noise.

    Each pixel maps to the nearest palette color (background black included)
    by Euclidean RGB distance; pixels farther than `tol` from every palette
    color fall back to background. Exact renderings therefore round-trip for
    any tol >= 0. `tol=None` disables the rejection band entirely (pure
    nearest-color), which is the right reading for soft model predictions as
    opposed to stored renderings.
    """
    px = rendered.pixels.astype(np.float64)
    pal = palette.as_array()  # (C, 3), row 0 is black
    # (H, W, C) squared distances to each palette color
    d2 = np.sum((px[:, :, None, :] - pal[None, None, :, :]) ** 2, axis=-1)
    ids = np.argmin(d2, axis=-1)
    if tol is not None:
        nearest = np.take_along_axis(d2, ids[..., None], axis=-1)[..., 0]
        ids[nearest > tol * tol] = 0
    return ClassMask(ids.astype(np.uint8))
