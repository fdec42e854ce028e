"""Training-data construction: zoom crops, grid composites, dynamic colors,
class suppression, scribble synthesis, and stacked canvas assembly.

Every operation here is a pure function of its inputs and the `Rng` stream it
is handed, so a pipeline run replays bit-identically from a seed.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DefectTooSmall, EmptySet, ShapeMismatch
from .instances import DefectInstance, extract_instances
from .manifest import DatasetManifest, ManifestEntry
from .palette import ColorPalette, decode_mask, render_mask
from .rasters import ClassMask, ImageBuffer, require_same_shape
from .rng import Rng

_MAX_LATTICE_ENUMERATION = 200_000
_MAX_COLOR_DISTANCE = 255.0 * math.sqrt(3.0)


class PromptKind(str, Enum):
    FULL_MASK = "full_mask"
    SCRIBBLE = "scribble"


@dataclass(frozen=True)
class CropSample:
    """A zoomed defect crop: aligned image/mask patches plus provenance."""

    image: ImageBuffer
    mask: ClassMask
    source_image_id: str
    margin_factor: float

    def __post_init__(self):
        require_same_shape(self.image, self.mask, "crop image/mask")


@dataclass(frozen=True)
class GridConfig:
    """An n-by-n composite layout. Cells beyond 4x4 shrink defects below one
    transformer patch, so n is capped there."""

    n: int
    canvas_side: int
    patch_size: int = 8

    def __post_init__(self):
        if self.n not in (1, 2, 3, 4):
            raise ValueError("grid n must be 1..4")
        if self.canvas_side % self.n != 0:
            raise ValueError(f"canvas_side {self.canvas_side} not divisible by n={self.n}")
        if self.canvas_side % self.patch_size != 0:
            raise ValueError("canvas_side must be divisible by the model patch size")

    @property
    def cell_side(self) -> int:
        return self.canvas_side // self.n


@dataclass(frozen=True)
class ScribbleParams:
    points: int = 3
    radius: int = 1
    max_area_fraction: float = 0.5


@dataclass(frozen=True)
class Scribble:
    """A sparse stand-in annotation: a thin stroke inside one instance."""

    pixels: np.ndarray  # (N, 2) rows/cols
    stroke_radius: int
    instance: DefectInstance

    def __post_init__(self):
        px = np.ascontiguousarray(np.asarray(self.pixels, dtype=np.int64))
        if len(px) == 0:
            raise EmptySet("scribble must be nonempty")
        inst_set = {(int(r), int(c)) for r, c in self.instance.pixels}
        if any((int(r), int(c)) not in inst_set for r, c in px):
            raise ValueError("scribble must stay inside its source instance")
        if len(px) > 0.5 * self.instance.pixel_count:
            raise ValueError("scribble may cover at most half the instance")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    def to_mask(self, height: int, width: int) -> ClassMask:
        ids = np.zeros((height, width), dtype=np.uint8)
        ids[self.pixels[:, 0], self.pixels[:, 1]] = self.instance.class_id
        return ClassMask(ids)


@dataclass(frozen=True)
class TrainExample:
    """One stacked input/target canvas pair ready for the model.

    The input canvas is the reference image above the query image; the target
    canvas is the rendered reference annotation above the rendered query
    mask. Scribble-kind examples pair an image with itself.
    """

    input_canvas: ImageBuffer
    target_canvas: ImageBuffer
    prompt_kind: PromptKind
    palette: ColorPalette
    suppressed_classes: frozenset = frozenset()

    def __post_init__(self):
        require_same_shape(self.input_canvas, self.target_canvas, "canvases")
        if self.input_canvas.height % 2 != 0:
            raise ShapeMismatch("canvas height must be twice the frame side")
        if self.prompt_kind == PromptKind.SCRIBBLE:
            h = self.input_canvas.height // 2
            top = self.input_canvas.pixels[:h]
            bottom = self.input_canvas.pixels[h:]
            if not np.array_equal(top, bottom):
                raise ValueError("scribble examples pair an image with itself")

    @property
    def frame_side(self) -> int:
        return self.input_canvas.height // 2


# ---------------------------------------------------------------------------
# adaptive cropping


def crop_window(bbox, margin_factor: float, width: int, height: int):
    """Expand an inclusive bbox by margin_factor x its side per axis, then
    clamp to the image. Degenerate (zero-side) boxes are padded to 2x2 first."""
    x0, y0, x1, y1 = bbox
    if x1 == x0:
        if x1 + 1 < width:
            x1 += 1
        else:
            x0 -= 1
    if y1 == y0:
        if y1 + 1 < height:
            y1 += 1
        else:
            y0 -= 1
    mx = int(round(margin_factor * (x1 - x0)))
    my = int(round(margin_factor * (y1 - y0)))
    return (max(0, x0 - mx), max(0, y0 - my),
            min(width - 1, x1 + mx), min(height - 1, y1 + my))


def adaptive_crop(image: ImageBuffer, mask: ClassMask, inst: DefectInstance,
                  margin_factor: float | None, out_side: int, rng: Rng,
                  margin_range=(0.25, 3.0), source_image_id: str = "") -> CropSample:
    """Cut a window around one instance with a proportional background margin
    and resample it to `out_side` (bilinear image, nearest mask).

    `margin_factor=None` draws the factor uniformly from `margin_range`; an
    explicit factor must lie inside the range. The instance always ends up
    fully inside the window: expansion never shrinks the bbox, and clamping
    only trims to image bounds that already contain it.
    """
    require_same_shape(image, mask, "image/mask")
    lo, hi = margin_range
    if margin_factor is None:
        margin_factor = float(rng.uniform(lo, hi))
    if not lo <= margin_factor <= hi:
        raise ValueError(f"margin_factor {margin_factor} outside range [{lo}, {hi}]")
    x0, y0, x1, y1 = crop_window(inst.bbox, margin_factor, image.width, image.height)
    img_patch = ImageBuffer(image.pixels[y0:y1 + 1, x0:x1 + 1])
    mask_patch = ClassMask(mask.ids[y0:y1 + 1, x0:x1 + 1])
    return CropSample(
        image=img_patch.resized(out_side, out_side),
        mask=mask_patch.resized_nearest(out_side, out_side),
        source_image_id=source_image_id,
        margin_factor=margin_factor,
    )


# ---------------------------------------------------------------------------
# spatial composites


def compose_grid(crops, cfg: GridConfig, rng: Rng | None = None,
                 min_defect_pixels: int | None = None):
    """Tile n*n crops into one composite frame (row-major cells).

    Rejects the crop set with `DefectTooSmall` if any instance in any cell
    has shrunk below `min_defect_pixels` (default: one full model patch),
    since such defects are too small for patch-based processing. When an
    `rng` is given the crop-to-cell assignment is shuffled.
    """
    crops = list(crops)
    if len(crops) != cfg.n * cfg.n:
        raise ValueError(f"need {cfg.n * cfg.n} crops for a {cfg.n}x{cfg.n} grid")
    cell = cfg.cell_side
    for crop in crops:
        if crop.image.height != cell or crop.image.width != cell:
            raise ShapeMismatch(f"crops must be {cell}x{cell} for this grid")
    if min_defect_pixels is None:
        min_defect_pixels = cfg.patch_size ** 2
    for crop in crops:
        for inst in extract_instances(crop.mask):
            if inst.pixel_count < min_defect_pixels:
                raise DefectTooSmall(
                    f"instance of class {inst.class_id} has {inst.pixel_count} px "
                    f"< {min_defect_pixels} after scaling"
                )
    if rng is not None:
        crops = [crops[i] for i in rng.permutation(len(crops))]
    img = np.zeros((cfg.canvas_side, cfg.canvas_side, 3), dtype=np.uint8)
    ids = np.zeros((cfg.canvas_side, cfg.canvas_side), dtype=np.uint8)
    for i, crop in enumerate(crops):
        r, c = divmod(i, cfg.n)
        img[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = crop.image.pixels
        ids[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = crop.mask.ids
    return ImageBuffer(img), ClassMask(ids)


# ---------------------------------------------------------------------------
# dynamic color assignment


def _color_lattice(num_classes: int) -> np.ndarray:
    q = 2
    while q ** 3 - 1 < num_classes:
        q += 1
    values = np.round(np.linspace(0.0, 255.0, q)).astype(np.int64)
    pts = np.array(list(itertools.product(values, repeat=3)), dtype=np.int64)
    return pts[np.any(pts != 0, axis=1)]  # black is reserved


def _best_subsets_exhaustive(cand: np.ndarray, k: int):
    d2 = np.sum((cand[:, None, :] - cand[None, :, :]) ** 2, axis=-1)
    triu = np.triu_indices(k, 1)
    best, best_subsets = -1, []
    for combo in itertools.combinations(range(len(cand)), k):
        idx = np.asarray(combo)
        score = d2[np.ix_(idx, idx)][triu].min()
        if score > best:
            best, best_subsets = score, [combo]
        elif score == best:
            best_subsets.append(combo)
    return best_subsets


def _greedy_maximin_subsets(cand: np.ndarray, k: int, rng: Rng, restarts: int = 32):
    d2 = np.sum((cand[:, None, :] - cand[None, :, :]) ** 2, axis=-1).astype(np.float64)
    triu = np.triu_indices(k, 1)
    best_score, best = -1.0, None
    for _ in range(restarts):
        start = int(rng.integers(len(cand)))
        chosen = [start]
        dist_to_chosen = d2[start].copy()
        for _ in range(k - 1):
            dist_to_chosen[chosen] = -1.0
            nxt = int(np.argmax(dist_to_chosen))
            chosen.append(nxt)
            dist_to_chosen = np.minimum(dist_to_chosen, d2[nxt])
        idx = np.asarray(chosen)
        score = d2[np.ix_(idx, idx)][triu].min()
        if score > best_score:
            best_score, best = score, tuple(sorted(chosen))
    return [best]


def assign_colors(num_classes: int, rng: Rng) -> ColorPalette:
    """Pick maximally separated colors from an RGB lattice and deal them to
    class ids at random.

    The lattice is the q^3 grid over {0..255} per channel with the smallest q
    that leaves at least `num_classes` non-black points. Among subsets
    achieving the best minimum pairwise distance, one is chosen at random
    (exhaustively for small candidate pools, greedy maximin beyond that), and
    the id-to-color assignment is a fresh uniform permutation per call, so no
    class can acquire a fixed color identity across training iterations.
    """
    if not 1 <= num_classes <= 32:
        raise ValueError("num_classes must be 1..32")
    cand = _color_lattice(num_classes)
    if num_classes == 1:
        color = cand[int(rng.integers(len(cand)))]
        return ColorPalette.from_class_colors(
            [tuple(int(v) for v in color)], separation=_MAX_COLOR_DISTANCE
        )
    if math.comb(len(cand), num_classes) <= _MAX_LATTICE_ENUMERATION:
        subsets = _best_subsets_exhaustive(cand, num_classes)
    else:
        subsets = _greedy_maximin_subsets(cand, num_classes, rng)
    combo = subsets[int(rng.integers(len(subsets)))]
    colors = cand[list(combo)]
    colors = colors[rng.permutation(num_classes)]
    return ColorPalette.from_class_colors([tuple(int(v) for v in c) for c in colors])


# ---------------------------------------------------------------------------
# selective suppression


def apply_suppression(example: TrainExample, classes_present, drop_prob: float,
                      rng: Rng) -> TrainExample:
    """Blank random classes out of the annotation canvases.

    Each present class is independently dropped with probability `drop_prob`;
    a draw that would drop every class is redrawn so at least one prompt
    survives. Dropped classes' pixels turn to background in both the
    reference annotation and the query target; image pixels are never
    touched, and kept classes' renderings stay bit-identical.
    """
    if not 0.0 <= drop_prob < 1.0:
        raise ValueError("drop_prob must lie in [0, 1)")
    classes_present = sorted(int(c) for c in classes_present)
    if drop_prob == 0.0 or not classes_present:
        return example
    while True:
        dropped = [c for c in classes_present if rng.random() < drop_prob]
        if len(dropped) < len(classes_present):
            break
    if not dropped:
        return example
    target = example.target_canvas.pixels.copy()
    for class_id in dropped:
        color = np.asarray(example.palette.color_of(class_id), dtype=np.uint8)
        target[np.all(target == color, axis=-1)] = 0
    return replace(
        example,
        target_canvas=ImageBuffer(target),
        suppressed_classes=example.suppressed_classes | frozenset(dropped),
    )


# ---------------------------------------------------------------------------
# scribbles


def bresenham_line(r0: int, c0: int, r1: int, c1: int) -> list:
    """Integer line rasterization between two pixel centers, inclusive."""
    pts = []
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr - dc
    r, c = r0, c0
    while True:
        pts.append((r, c))
        if r == r1 and c == c1:
            return pts
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc


def _disk_offsets(radius: int):
    offs = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if dr * dr + dc * dc <= radius * radius:
                offs.append((dr, dc))
    return offs


def rasterize_polyline(points, radius: int, height: int, width: int) -> np.ndarray:
    """Rasterize a polyline of (row, col) vertices into a dilated pixel set.

    Consecutive vertices are joined with Bresenham segments, the path is
    dilated with a Euclidean disk of the given radius, and the result is
    clipped to the raster bounds. Returns a sorted (N, 2) array.
    """
    points = [(int(r), int(c)) for r, c in points]
    if not points:
        raise EmptySet("polyline needs at least one vertex")
    path = set()
    if len(points) == 1:
        path.add(points[0])
    for (r0, c0), (r1, c1) in zip(points, points[1:]):
        path.update(bresenham_line(r0, c0, r1, c1))
    out = set()
    for dr, dc in _disk_offsets(radius):
        for r, c in path:
            rr, cc = r + dr, c + dc
            if 0 <= rr < height and 0 <= cc < width:
                out.add((rr, cc))
    return np.asarray(sorted(out), dtype=np.int64).reshape(-1, 2)


def synthesize_scribble(inst: DefectInstance, mask: ClassMask, rng: Rng,
                        params: ScribbleParams = ScribbleParams()) -> Scribble:
    """Draw a thin polyline through random pixels of an instance.

    The stroke is dilated by the configured radius and intersected with the
    instance, then radius and point count back off until the stroke covers at
    most the configured fraction of the instance (a single interior point is
    the floor, which the pixel_count >= 4 precondition keeps feasible).
    """
    if inst.pixel_count < 4:
        raise ValueError("instance too small to scribble (needs >= 4 pixels)")
    limit = params.max_area_fraction * inst.pixel_count
    inst_set = {(int(r), int(c)) for r, c in inst.pixels}
    k = min(params.points, inst.pixel_count)
    picks = inst.pixels[rng.choice(inst.pixel_count, size=k, replace=False)]
    points = [(int(r), int(c)) for r, c in picks]
    for radius in range(params.radius, -1, -1):
        for n_points in range(k, 0, -1):
            raster = rasterize_polyline(points[:n_points], radius, mask.height, mask.width)
            keep = np.asarray(
                [p for p in map(tuple, raster) if p in inst_set], dtype=np.int64
            ).reshape(-1, 2)
            if 1 <= len(keep) <= limit:
                return Scribble(pixels=keep, stroke_radius=radius, instance=inst)
    # Unreachable: one bare point always satisfies the bound.
    raise AssertionError("scribble backoff failed")


# ---------------------------------------------------------------------------
# canvas assembly


def build_train_example(ref, query, palette: ColorPalette, prompt_kind: PromptKind,
                        rng: Rng, scribble_params: ScribbleParams = ScribbleParams()) -> TrainExample:
    """Stack a reference/query pair into input and target canvases.

    For full-mask examples the reference and query are independent labeled
    frames. For scribble examples the query is forced to equal the reference:
    the reference annotation becomes a synthesized scribble for one randomly
    chosen instance and the query target is that instance's full rendering,
    which is exactly the sparse-prompt-to-complete-mask correspondence the
    model must learn.
    """
    ref_image, ref_mask = ref
    require_same_shape(ref_image, ref_mask, "reference image/mask")
    if prompt_kind == PromptKind.FULL_MASK:
        query_image, query_mask = query
        require_same_shape(query_image, query_mask, "query image/mask")
        require_same_shape(ref_image, query_image, "reference/query")
        input_canvas = ref_image.vstack(query_image)
        target_canvas = render_mask(ref_mask, palette).vstack(render_mask(query_mask, palette))
        return TrainExample(input_canvas, target_canvas, prompt_kind, palette)
    candidates = [i for i in extract_instances(ref_mask) if i.pixel_count >= 4]
    if not candidates:
        raise EmptySet("no instance large enough to scribble in reference mask")
    inst = candidates[int(rng.integers(len(candidates)))]
    scribble = synthesize_scribble(inst, ref_mask, rng, scribble_params)
    scribble_mask = scribble.to_mask(ref_mask.height, ref_mask.width)
    inst_ids = np.zeros((ref_mask.height, ref_mask.width), dtype=np.uint8)
    inst_ids[inst.pixels[:, 0], inst.pixels[:, 1]] = inst.class_id
    input_canvas = ref_image.vstack(ref_image)
    target_canvas = render_mask(scribble_mask, palette).vstack(
        render_mask(ClassMask(inst_ids), palette)
    )
    return TrainExample(input_canvas, target_canvas, prompt_kind, palette)


def mix_batches(composites, originals, composite_fraction: float, rng: Rng):
    """Interleave two example streams at a target long-run mixing fraction."""
    if not 0.0 <= composite_fraction <= 1.0:
        raise ValueError("composite_fraction must lie in [0, 1]")
    while True:
        source = composites if rng.random() < composite_fraction else originals
        try:
            yield next(source)
        except StopIteration:
            return


# ---------------------------------------------------------------------------
# pipeline configuration and the example sampler used by training


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for example construction, loadable from a JSON config file.

    Schema (all keys optional, defaults below):
        margin_range: [lo, hi]          crop margin as a fraction of bbox side
        grid_weights: {"1": w, ...}     relative weight per grid side n
        drop_prob: float                per-class suppression probability
        composite_fraction: float       share of composite-sourced examples
        scribble_fraction: float        share of scribble-kind examples
        scribble_points: int            polyline vertices per scribble
        scribble_radius: int            stroke dilation radius
        scribble_max_area_fraction: float
        min_defect_pixels: int | null   null = one model patch (patch_size^2)
    """

    margin_range: tuple = (0.25, 3.0)
    grid_weights: dict = field(default_factory=lambda: {1: 1.0, 2: 1.0, 4: 1.0})
    drop_prob: float = 0.3
    composite_fraction: float = 0.5
    scribble_fraction: float = 0.3
    scribble_points: int = 3
    scribble_radius: int = 1
    scribble_max_area_fraction: float = 0.5
    min_defect_pixels: int | None = None

    def __post_init__(self):
        lo, hi = self.margin_range
        if lo < 0 or hi < lo:
            raise ValueError("margin_range must satisfy 0 <= lo <= hi")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")
        for name in ("composite_fraction", "scribble_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        weights = {int(k): float(v) for k, v in self.grid_weights.items()}
        if not weights or any(v < 0 for v in weights.values()) or sum(weights.values()) <= 0:
            raise ValueError("grid_weights must contain nonnegative weights summing > 0")
        object.__setattr__(self, "grid_weights", weights)
        object.__setattr__(self, "margin_range", (float(lo), float(hi)))

    @property
    def scribble_params(self) -> ScribbleParams:
        return ScribbleParams(
            points=self.scribble_points,
            radius=self.scribble_radius,
            max_area_fraction=self.scribble_max_area_fraction,
        )

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        return cls.from_jsonable(doc)

    @classmethod
    def from_jsonable(cls, doc: dict) -> "PipelineConfig":
        kwargs = {}
        for key in ("drop_prob", "composite_fraction", "scribble_fraction",
                    "scribble_points", "scribble_radius",
                    "scribble_max_area_fraction", "min_defect_pixels"):
            if key in doc:
                kwargs[key] = doc[key]
        if "margin_range" in doc:
            kwargs["margin_range"] = tuple(doc["margin_range"])
        if "grid_weights" in doc:
            kwargs["grid_weights"] = doc["grid_weights"]
        return cls(**kwargs)

    def to_jsonable(self) -> dict:
        return {
            "margin_range": list(self.margin_range),
            "grid_weights": {str(k): v for k, v in self.grid_weights.items()},
            "drop_prob": self.drop_prob,
            "composite_fraction": self.composite_fraction,
            "scribble_fraction": self.scribble_fraction,
            "scribble_points": self.scribble_points,
            "scribble_radius": self.scribble_radius,
            "scribble_max_area_fraction": self.scribble_max_area_fraction,
            "min_defect_pixels": self.min_defect_pixels,
        }


def load_labeled_pair(manifest: DatasetManifest, entry: ManifestEntry):
    """Load an entry's image and decode its mask via the manifest palette."""
    if entry.mask_path is None:
        raise ValueError(f"entry {entry.image_id} has no mask")
    if manifest.palette is None:
        raise ValueError("manifest records no palette; masks cannot be decoded")
    image = ImageBuffer.open_png(manifest.resolve(entry.image_path))
    rendered = ImageBuffer.open_png(manifest.resolve(entry.mask_path))
    return image, decode_mask(rendered, manifest.palette)


class ExampleSampler:
    """Streams train examples from a labeled manifest.

    Per draw: assign fresh colors, build either a composite frame pair or a
    plain resized pair, optionally convert to a scribble example, and (when
    enabled) suppress classes. Counters record what was emitted so training
    stages can assert their feature-flag discipline.
    """

    def __init__(self, manifest: DatasetManifest, config: PipelineConfig,
                 canvas_side: int, patch_size: int, rng: Rng,
                 allow_scribble: bool = False, allow_suppression: bool = False,
                 split: str | None = "train", max_composite_attempts: int = 8,
                 mask_transform=None):
        entries = [e for e in manifest.entries if e.mask_path]
        if split is not None:
            scoped = [e for e in entries if e.split == split]
            entries = scoped or entries
        if not entries:
            raise EmptySet("manifest has no labeled entries to sample from")
        self.manifest = manifest
        self.config = config
        self.canvas_side = canvas_side
        self.patch_size = patch_size
        self.rng = rng
        self.allow_scribble = allow_scribble
        self.allow_suppression = allow_suppression
        self.max_composite_attempts = max_composite_attempts
        self.counters = {"full_mask": 0, "scribble": 0, "suppressed": 0, "composite": 0}
        self._pairs = []
        for e in entries:
            image, mask = load_labeled_pair(manifest, e)
            if mask_transform is not None:
                mask = mask_transform(mask)
            self._pairs.append((e.image_id, image, mask))
        self._grid_ns = sorted(n for n in config.grid_weights
                               if config.grid_weights[n] > 0 and canvas_side % n == 0)
        self._grid_p = np.asarray(
            [config.grid_weights[n] for n in self._grid_ns], dtype=np.float64
        )
        self._grid_p /= self._grid_p.sum()
        self._instances = []  # flat (pair_index, instance) pool for crops
        for i, (_, _, mask) in enumerate(self._pairs):
            for inst in extract_instances(mask):
                self._instances.append((i, inst))

    def _plain_frame(self, require_classes=None):
        pool = range(len(self._pairs))
        if require_classes:
            matching = [i for i in pool
                        if require_classes <= set(self._pairs[i][2].class_ids_present())]
            pool = matching or pool
        idx = pool[int(self.rng.integers(len(pool)))] if isinstance(pool, list) \
            else int(self.rng.integers(len(self._pairs)))
        image_id, image, mask = self._pairs[idx]
        side = self.canvas_side
        if (image.height, image.width) != (side, side):
            image = image.resized(side, side)
            mask = mask.resized_nearest(side, side)
        return image, mask

    def _composite_frame(self):
        if not self._instances:
            return None
        cfg_min = self.config.min_defect_pixels
        min_px = self.patch_size ** 2 if cfg_min is None else cfg_min
        for _ in range(self.max_composite_attempts):
            n = int(self.rng.choice(self._grid_ns, p=self._grid_p)) if self._grid_ns else 1
            grid = GridConfig(n=n, canvas_side=self.canvas_side, patch_size=self.patch_size)
            crops = []
            for _ in range(n * n):
                pi, inst = self._instances[int(self.rng.integers(len(self._instances)))]
                image_id, image, mask = self._pairs[pi]
                crops.append(adaptive_crop(
                    image, mask, inst, None, grid.cell_side, self.rng,
                    margin_range=self.config.margin_range, source_image_id=image_id,
                ))
            try:
                return compose_grid(crops, grid, min_defect_pixels=min_px)
            except DefectTooSmall:
                continue
        return None

    def _frame(self, require_classes=None):
        if self.rng.random() < self.config.composite_fraction:
            frame = self._composite_frame()
            if frame is not None:
                self.counters["composite"] += 1
                return frame
        return self._plain_frame(require_classes)

    @staticmethod
    def _restrict_to_prompted(ref_mask: ClassMask, query_mask: ClassMask):
        """Make the pair prompt-consistent and compact its class ids.

        The query target may only carry classes that are annotated in the
        reference: unprompted defects are zeroed, which is the suppression
        lesson built into every example. The surviving ids are remapped onto
        1..k, and colors get assigned per example for exactly those k classes,
        so a single-class reference draws from the whole color lattice instead
        of always receiving one half of a fixed split.
        """
        prompted = sorted(ref_mask.class_ids_present())
        lut = np.zeros(256, dtype=np.uint8)
        for compact, original in enumerate(prompted, start=1):
            lut[original] = compact
        return ClassMask(lut[ref_mask.ids]), ClassMask(lut[query_mask.ids]), len(prompted)

    def sample(self) -> TrainExample:
        ref = self._frame()
        want_scribble = (
            self.allow_scribble and self.rng.random() < self.config.scribble_fraction
        )
        if want_scribble and any(i.pixel_count >= 4 for i in extract_instances(ref[1])):
            ref_mask, _, k = self._restrict_to_prompted(ref[1], ref[1])
            palette = assign_colors(max(1, k), self.rng)
            example = build_train_example(
                (ref[0], ref_mask), (ref[0], ref_mask), palette,
                PromptKind.SCRIBBLE, self.rng,
                scribble_params=self.config.scribble_params,
            )
            self.counters["scribble"] += 1
            return example
        # pair the reference with a query that shows the prompted classes (a
        # prompt is chosen to match the images it will label); extra query
        # classes beyond the prompt get zeroed by _restrict_to_prompted
        query = self._frame(require_classes=set(ref[1].class_ids_present()))
        ref_mask, query_mask, k = self._restrict_to_prompted(ref[1], query[1])
        palette = assign_colors(max(1, k), self.rng)
        example = build_train_example((ref[0], ref_mask), (query[0], query_mask),
                                      palette, PromptKind.FULL_MASK, self.rng)
        self.counters["full_mask"] += 1
        if self.allow_suppression and self.config.drop_prob > 0.0:
            present = set(range(1, k + 1))
            if len(present) > 1:
                example = apply_suppression(example, present, self.config.drop_prob, self.rng)
                if example.suppressed_classes:
                    self.counters["suppressed"] += 1
        return example

    def stream(self):
        while True:
            yield self.sample()


def preview_samples(manifest: DatasetManifest, config: PipelineConfig, rng: Rng,
                    out_dir, count: int = 4, canvas_side: int = 64,
                    patch_size: int = 8, allow_scribble: bool = True) -> list:
    """Write sample composites and stacked canvases as PNGs for visual audit."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler = ExampleSampler(
        manifest, config, canvas_side, patch_size, rng,
        allow_scribble=allow_scribble, allow_suppression=config.drop_prob > 0,
        split=None,
    )
    written = []
    for i in range(count):
        example = sampler.sample()
        inp = out_dir / f"sample_{i:02d}_input.png"
        tgt = out_dir / f"sample_{i:02d}_target_{example.prompt_kind.value}.png"
        example.input_canvas.save_png(inp)
        example.target_canvas.save_png(tgt)
        written += [inp, tgt]
    return written
