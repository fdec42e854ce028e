"""Connected-component extraction of defect instances from class masks.

Components are 8-connected: thin scratch-like defects run diagonally, and
4-connectivity would shatter them into fragments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class DefectInstance:
    """One connected defect region of a single class.

    `bbox` is the inclusive pixel rectangle (x0, y0, x1, y1); `pixels` holds
    the region's (row, col) coordinates, so pixel_count == len(pixels).
    """

    class_id: int
    bbox: tuple
    pixel_count: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError("defect instances are non-background (class_id >= 1)")
        if self.pixel_count < 1 or self.pixel_count != len(self.pixels):
            raise ValueError("pixel_count must match the stored pixel coordinates")
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.int64))
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def bbox_width(self) -> int:
        return self.bbox[2] - self.bbox[0] + 1

    @property
    def bbox_height(self) -> int:
        return self.bbox[3] - self.bbox[1] + 1


def extract_instances(mask) -> list[DefectInstance]:
    """8-connected components per non-background class, in (class, scan) order.

    The returned instances partition the foreground exactly: they are
    pairwise disjoint and their union is every non-background pixel.
    """
    out = []
    for class_id in mask.class_ids_present():
        labeled, n = ndimage.label(mask.binary(class_id), structure=_EIGHT_CONNECTED)
        for comp in range(1, n + 1):
            rows, cols = np.nonzero(labeled == comp)
            bbox = (int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))
            out.append(
                DefectInstance(
                    class_id=class_id,
                    bbox=bbox,
                    pixel_count=len(rows),
                    pixels=np.column_stack([rows, cols]),
                )
            )
    return out
