import numpy as np
import pytest

from seglabel.palette import ColorPalette
from seglabel.rasters import ClassMask, ImageBuffer
from seglabel.rng import Rng


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def rgb_palette():
    return ColorPalette(((0, 0, 0), (255, 0, 0), (0, 255, 0), (0, 0, 255)))


def random_image(rng, height, width):
    return ImageBuffer(rng.integers(0, 256, size=(height, width, 3)).astype(np.uint8))


def random_mask(rng, height, width, num_classes=3, fg_prob=0.2):
    ids = np.zeros((height, width), dtype=np.uint8)
    fg = rng.random((height, width)) < fg_prob
    ids[fg] = rng.integers(1, num_classes + 1, size=int(fg.sum()))
    return ClassMask(ids)


def blob_mask(height, width, cy, cx, radius, class_id=1):
    yy, xx = np.mgrid[0:height, 0:width]
    ids = np.zeros((height, width), dtype=np.uint8)
    ids[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius] = class_id
    return ClassMask(ids)
