"""Synthetic defect corpus generation.

Stands in for proprietary inspection imagery: a stripe/grid "circuit"
background plus parametric defects (blobs, scratch lines, rings) whose masks
are exact by construction, because the image is painted from the mask's own
pixel set. Generation is fully deterministic from the spec seed, down to the
PNG bytes on disk.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .instances import extract_instances
from .manifest import DatasetManifest, ManifestEntry
from .palette import ColorPalette, render_mask
from .rasters import ClassMask, ImageBuffer
from .rng import Rng

DEFECT_KINDS = ("blob", "scratch", "ring", "block")


@dataclass(frozen=True)
class DefectClassSpec:
    """One defect class: its generator kind, size range and paint color.

    `grid_snap` (block kind) snaps position and side length to multiples of
    the given pixel grid; snapping to the model patch size makes block edges
    coincide with patch boundaries.
    """

    name: str
    kind: str
    size_range: tuple = (6, 10)
    color: tuple = (200, 180, 60)
    grid_snap: int = 1

    def __post_init__(self):
        if self.kind not in DEFECT_KINDS:
            raise InvalidSpec(f"unknown defect kind {self.kind!r}")
        lo, hi = self.size_range
        if lo < 2 or hi < lo:
            raise InvalidSpec("size_range must satisfy 2 <= lo <= hi")
        if self.grid_snap < 1:
            raise InvalidSpec("grid_snap must be >= 1")


@dataclass(frozen=True)
class BackgroundSpec:
    base: int = 40
    stripe: int = 90
    period: int = 4
    orientation: str = "vertical"  # vertical | horizontal | grid

    def __post_init__(self):
        if self.orientation not in ("vertical", "horizontal", "grid"):
            raise InvalidSpec(f"unknown orientation {self.orientation!r}")
        if self.period < 2:
            raise InvalidSpec("period must be >= 2")


@dataclass(frozen=True)
class SyntheticSpec:
    """`presence` controls which classes appear per image: "all" puts one
    instance of every class in every image; "mixed" draws a nonempty random
    subset per image, the way real inspection data mixes defect types."""

    image_side: int = 64
    classes: tuple = (DefectClassSpec("blob", "blob"),)
    counts: dict = field(default_factory=lambda: {"train": 16, "test": 4})
    background: BackgroundSpec = BackgroundSpec()
    min_defect_pixels: int = 64
    presence: str = "all"
    seed: int = 0

    def __post_init__(self):
        if self.presence not in ("all", "mixed"):
            raise InvalidSpec(f"unknown presence mode {self.presence!r}")
        if self.image_side < 16:
            raise InvalidSpec("image_side must be >= 16")
        if not self.classes:
            raise InvalidSpec("need at least one defect class")
        for spec in self.classes:
            hi = spec.size_range[1]
            # footprint per kind: blob/ring sizes are radii, blocks are side
            # lengths, scratches extend to ~3x their size parameter
            footprint = {"blob": 2 * hi + 2, "ring": 2 * hi + 2,
                         "block": hi + 2, "scratch": 3 * hi + 4}[spec.kind]
            if footprint >= self.image_side:
                raise InvalidSpec(
                    f"defect {spec.name} (size up to {hi}) "
                    f"does not fit a {self.image_side}px image"
                )
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "counts", dict(self.counts))

    @classmethod
    def from_file(cls, path) -> "SyntheticSpec":
        doc = json.loads(Path(path).read_text())
        return cls.from_jsonable(doc)

    @classmethod
    def from_jsonable(cls, doc: dict) -> "SyntheticSpec":
        classes = tuple(
            DefectClassSpec(
                name=c["name"], kind=c["kind"],
                size_range=tuple(c.get("size_range", (6, 10))),
                color=tuple(c.get("color", (200, 180, 60))),
                grid_snap=int(c.get("grid_snap", 1)),
            )
            for c in doc.get("classes", [])
        ) or (DefectClassSpec("blob", "blob"),)
        bg = BackgroundSpec(**doc.get("background", {}))
        return cls(
            image_side=int(doc.get("image_side", 64)),
            classes=classes,
            counts={str(k): int(v) for k, v in doc.get("counts", {"train": 16, "test": 4}).items()},
            background=bg,
            min_defect_pixels=int(doc.get("min_defect_pixels", 64)),
            presence=str(doc.get("presence", "all")),
            seed=int(doc.get("seed", 0)),
        )


def _background(spec: SyntheticSpec, rng: Rng) -> np.ndarray:
    side = spec.image_side
    bg = spec.background
    img = np.full((side, side, 3), bg.base, dtype=np.uint8)
    phase = int(rng.integers(bg.period))
    cols = (np.arange(side) + phase) % bg.period == 0
    rows = (np.arange(side) + phase) % bg.period == 0
    if bg.orientation in ("vertical", "grid"):
        img[:, cols] = bg.stripe
    if bg.orientation in ("horizontal", "grid"):
        img[rows, :] = bg.stripe
    return img


def _draw_blob(side: int, size: int, rng: Rng) -> np.ndarray:
    margin = size + 1
    cy = int(rng.integers(margin, side - margin))
    cx = int(rng.integers(margin, side - margin))
    ry = size
    rx = max(2, int(round(size * float(rng.uniform(0.7, 1.3)))))
    yy, xx = np.mgrid[0:side, 0:side]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _draw_scratch(side: int, size: int, rng: Rng) -> np.ndarray:
    # a thick line segment of length ~3x the size parameter
    length = 3 * size
    margin = 2
    for _ in range(20):
        y0 = int(rng.integers(margin, side - margin))
        x0 = int(rng.integers(margin, side - margin))
        angle = float(rng.uniform(0, np.pi))
        y1 = int(round(y0 + length * np.sin(angle)))
        x1 = int(round(x0 + length * np.cos(angle)))
        if margin <= y1 < side - margin and margin <= x1 < side - margin:
            break
    else:
        y1 = min(side - margin - 1, y0 + length)
        x1 = x0
    yy, xx = np.mgrid[0:side, 0:side]
    # distance from each pixel to the segment
    vy, vx = y1 - y0, x1 - x0
    seg2 = max(vy * vy + vx * vx, 1)
    t = np.clip(((yy - y0) * vy + (xx - x0) * vx) / seg2, 0.0, 1.0)
    dist2 = (yy - (y0 + t * vy)) ** 2 + (xx - (x0 + t * vx)) ** 2
    thickness = max(1.2, size / 4)
    return dist2 <= thickness * thickness


def _draw_ring(side: int, size: int, rng: Rng) -> np.ndarray:
    margin = size + 1
    cy = int(rng.integers(margin, side - margin))
    cx = int(rng.integers(margin, side - margin))
    width = max(2.0, size / 3)
    yy, xx = np.mgrid[0:side, 0:side]
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (d2 <= size * size) & (d2 >= (size - width) ** 2)


def _draw_block(side: int, size: int, rng: Rng, snap: int = 1) -> np.ndarray:
    size = max(snap, (size // snap) * snap)
    max_cell = (side - size) // snap
    y = int(rng.integers(0, max_cell + 1)) * snap
    x = int(rng.integers(0, max_cell + 1)) * snap
    pixels = np.zeros((side, side), dtype=bool)
    pixels[y:y + size, x:x + size] = True
    return pixels


_DRAWERS = {"blob": _draw_blob, "scratch": _draw_scratch, "ring": _draw_ring}


def _place_defect(spec: SyntheticSpec, cls: DefectClassSpec, occupied: np.ndarray,
                  rng: Rng) -> np.ndarray:
    """Draw one instance that clears the pixel floor and overlaps nothing."""
    lo, hi = cls.size_range
    for attempt in range(200):
        size = int(rng.integers(lo, hi + 1))
        if cls.kind == "block":
            pixels = _draw_block(spec.image_side, size, rng, snap=cls.grid_snap)
        else:
            pixels = _DRAWERS[cls.kind](spec.image_side, size, rng)
        if pixels.sum() < spec.min_defect_pixels:
            continue
        # keep a 1px moat so instances never touch (8-connectivity)
        dil = np.zeros_like(occupied)
        dil |= pixels
        dil[1:] |= pixels[:-1]
        dil[:-1] |= pixels[1:]
        dil[:, 1:] |= pixels[:, :-1]
        dil[:, :-1] |= pixels[:, 1:]
        if not (dil & occupied).any():
            return pixels
    raise InvalidSpec(
        f"could not place a {cls.kind} of {cls.size_range} px after 200 tries; "
        "the image is too crowded or the floor too high"
    )


def storage_palette(num_classes: int) -> ColorPalette:
    """Fixed palette used to store masks on disk (id order, no randomness)."""
    from .datapipe import _best_subsets_exhaustive, _color_lattice

    cand = _color_lattice(num_classes)
    if num_classes == 1:
        return ColorPalette.from_class_colors([(255, 0, 0)])
    import math

    if math.comb(len(cand), num_classes) <= 200_000:
        combo = _best_subsets_exhaustive(cand, num_classes)[0]
    else:
        combo = tuple(range(num_classes))
    colors = [tuple(int(v) for v in cand[i]) for i in combo]
    return ColorPalette.from_class_colors(colors)


def generate_image(spec: SyntheticSpec, rng: Rng):
    """One (image, mask) pair with one instance per (present) class."""
    side = spec.image_side
    img = _background(spec, rng)
    ids = np.zeros((side, side), dtype=np.uint8)
    occupied = np.zeros((side, side), dtype=bool)
    present = list(range(1, len(spec.classes) + 1))
    if spec.presence == "mixed" and len(spec.classes) > 1:
        present = [c for c in present if rng.random() < 0.6]
        if not present:
            present = [int(rng.integers(1, len(spec.classes) + 1))]
    for class_id, cls in enumerate(spec.classes, start=1):
        if class_id not in present:
            continue
        pixels = _place_defect(spec, cls, occupied, rng)
        occupied |= pixels
        ids[pixels] = class_id
        shade = rng.integers(-15, 16, size=(side, side, 1))
        color = np.asarray(cls.color, dtype=np.int64)
        img[pixels] = np.clip(color + shade, 0, 255).astype(np.uint8)[pixels]
    return ImageBuffer(img), ClassMask(ids)


def generate_synthetic(spec: SyntheticSpec, out_dir) -> DatasetManifest:
    """Write a deterministic image/mask corpus and its manifest to disk."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    palette = storage_palette(len(spec.classes))
    rng = Rng(spec.seed)
    entries = []
    for split in sorted(spec.counts):
        split_rng, = rng.split(1)
        for i in range(spec.counts[split]):
            image, mask = generate_image(spec, split_rng)
            image_id = f"{split}-{i:04d}"
            image_rel = f"images/{image_id}.png"
            mask_rel = f"masks/{image_id}.png"
            image.save_png(out_dir / image_rel)
            render_mask(mask, palette).save_png(out_dir / mask_rel)
            entries.append(ManifestEntry(
                image_id=image_id, image_path=image_rel,
                mask_path=mask_rel, split=split,
            ))
    manifest = DatasetManifest(
        dataset_id=f"synthetic-{spec.seed}",
        class_names=("background", *[c.name for c in spec.classes]),
        entries=tuple(entries),
        palette=palette,
        root=out_dir,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest
