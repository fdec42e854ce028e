"""Two-stage training orchestration and the label-source comparison study.

Stage 1 fine-tunes broadly on the large corpus with composites and dynamic
colors but with class suppression and scribble prompting switched off; stage
2 refines on a curated set with both switched on. The desk-scale defaults
(2,000 images x 3 epochs, then 400 x 2) mirror the production-scale schedule
recorded in REFERENCE_SCHEDULE at roughly 1:100.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import ExampleSampler, PipelineConfig, PromptKind
from .errors import InvalidSpec
from .instances import extract_instances
from .manifest import DatasetManifest
from .metrics import CoverageCriteria, MetricReport, evaluate
from .model import (Model, ModelConfig, OptimizerState, TrainHyper,
                    inference_plan, infer, init_model, random_plan, train_step)
from .palette import render_mask
from .rasters import ClassMask, ImageBuffer
from .rng import Rng

# Production-scale reference schedule this library's desk-scale defaults
# mirror (not runnable here: that corpus is proprietary and GPU-sized).
REFERENCE_SCHEDULE = {
    1: {"images": 200_000, "epochs": 30},
    2: {"images": 10_000, "epochs": 10},
}

DESK_SCALE_IMAGES = {1: 2_000, 2: 400}


@dataclass(frozen=True)
class StageConfig:
    """One stage of the schedule plus its feature flags.

    Stage 1 must keep suppression and scribble prompting off; stage 2
    normally enables both. Curation (stage 2) drops instances below
    `min_instance_pixels` and renames classes through `class_merge_map`
    before sampling.
    """

    stage: int
    epochs: int
    learning_rate: float = 1.0
    batch_size: int = 8
    suppression: bool = False
    scribble: bool = False
    split: str = "train"
    warmup_frac: float = 0.1
    decay_frac: float = 0.3
    query_plan_frac: float = 0.5
    class_merge_map: dict = field(default_factory=dict)
    min_instance_pixels: int | None = None

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if self.stage == 1 and (self.suppression or self.scribble):
            raise ValueError("stage 1 excludes suppression and scribble prompting")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        object.__setattr__(
            self, "class_merge_map",
            {int(k): int(v) for k, v in self.class_merge_map.items()},
        )

    @classmethod
    def stage1(cls, **kw) -> "StageConfig":
        kw.setdefault("epochs", 3)
        return cls(stage=1, **kw)

    @classmethod
    def stage2(cls, **kw) -> "StageConfig":
        kw.setdefault("epochs", 2)
        kw.setdefault("suppression", True)
        kw.setdefault("scribble", True)
        return cls(stage=2, **kw)

    @classmethod
    def from_jsonable(cls, doc: dict) -> "StageConfig":
        return cls(**{k: doc[k] for k in doc})


def curate_mask(mask: ClassMask, merge_map: dict, min_instance_pixels: int | None) -> ClassMask:
    """Merge visually-similar classes and drop under-sized instances."""
    ids = mask.ids.copy()
    if merge_map:
        lut = np.arange(256, dtype=np.uint8)
        for src, dst in merge_map.items():
            lut[src] = dst
        ids = lut[ids]
    if min_instance_pixels:
        cur = ClassMask(ids)
        for inst in extract_instances(cur):
            if inst.pixel_count < min_instance_pixels:
                ids[inst.pixels[:, 0], inst.pixels[:, 1]] = 0
    return ClassMask(ids)


def _lr_schedule(step: int, total: int, cfg: StageConfig) -> float:
    warmup = max(1, int(round(cfg.warmup_frac * total)))
    decay_from = total - int(round(cfg.decay_frac * total))
    if step < warmup:
        return cfg.learning_rate * (step + 1) / warmup
    if step >= decay_from and total > decay_from:
        frac = (total - step) / (total - decay_from)
        return cfg.learning_rate * max(0.05, frac)
    return cfg.learning_rate


def run_stage(model: Model, stage: StageConfig, manifest: DatasetManifest,
              rng: Rng, pipeline: PipelineConfig | None = None,
              stats_path=None, momentum: float = 0.9):
    """Train `model` for one stage over pipeline-built batches.

    Returns (trained model, history) where history is one record per step
    with step/loss/lr; the same records stream to `stats_path` as
    line-delimited JSON when given. The sampler is instrumented, and its
    counters are attached to the history's last record under "counters" so
    stage-flag discipline is auditable.
    """
    pipeline = pipeline or PipelineConfig()
    mask_transform = None
    if stage.class_merge_map or stage.min_instance_pixels:
        mask_transform = lambda m: curate_mask(
            m, stage.class_merge_map, stage.min_instance_pixels
        )
    sampler = ExampleSampler(
        manifest, pipeline, model.cfg.canvas_side, model.cfg.patch_size,
        rng, allow_scribble=stage.scribble, allow_suppression=stage.suppression,
        split=stage.split, mask_transform=mask_transform,
    )
    labeled = len(sampler._pairs)
    steps = stage.epochs * math.ceil(labeled / stage.batch_size)
    history = []
    state = OptimizerState.zeros_like(model)
    out = open(stats_path, "w") if stats_path else None
    try:
        for step in range(steps):
            examples = [sampler.sample() for _ in range(stage.batch_size)]
            plans = [
                inference_plan(model.cfg)
                if rng.random() < stage.query_plan_frac
                else random_plan(model.cfg, rng)
                for _ in examples
            ]
            lr = _lr_schedule(step, steps, stage)
            model, state, stats = train_step(
                model, examples, plans, state, TrainHyper(lr=lr, momentum=momentum)
            )
            record = {"step": step, "loss": stats["loss"], "lr": lr}
            history.append(record)
            if out:
                out.write(json.dumps(record) + "\n")
    finally:
        if out:
            out.close()
    if history:
        history[-1] = {**history[-1], "counters": dict(sampler.counters)}
    return model, history


def run_schedule(model: Model, stages, manifest: DatasetManifest, rng: Rng,
                 pipeline: PipelineConfig | None = None, stats_dir=None):
    """Run consecutive stages, splitting the rng once per stage."""
    histories = []
    for stage in stages:
        stage_rng, = rng.split(1)
        stats_path = None
        if stats_dir is not None:
            stats_path = Path(stats_dir) / f"stage{stage.stage}.jsonl"
        model, history = run_stage(model, stage, manifest, stage_rng,
                                   pipeline=pipeline, stats_path=stats_path)
        histories.append(history)
    return model, histories


# ---------------------------------------------------------------------------
# label-source comparison study


@dataclass(frozen=True)
class ExperimentResult:
    """Downstream metrics for models trained on human vs auto labels."""

    human: MetricReport
    auto: MetricReport
    class_id: int

    @property
    def mean_iou_gap(self) -> float:
        return abs(self.human.mean_iou - self.auto.mean_iou)

    @property
    def recall_gap(self) -> float:
        return abs(self.human.recall - self.auto.recall)

    def to_jsonable(self) -> dict:
        return {
            "class_id": self.class_id,
            "human": self.human.to_jsonable(),
            "auto": self.auto.to_jsonable(),
            "deltas": {
                "mean_iou_gap": self.mean_iou_gap,
                "recall_gap": self.recall_gap,
            },
        }


def model_labeler(model: Model, manifest: DatasetManifest, prompt_entry_id: str,
                  class_id: int, tol: float | None = None):
    """Wrap a trained model as a labeler callable for compare_label_sources.

    The prompt is one labeled image from the manifest; every query is
    auto-labeled against that single reference pair in full-mask mode.
    """
    from .datapipe import load_labeled_pair
    from .palette import ColorPalette

    entry = manifest.entry(prompt_entry_id)
    prompt_image, prompt_mask = load_labeled_pair(manifest, entry)
    palette = manifest.palette
    side = model.cfg.canvas_side
    if (prompt_image.height, prompt_image.width) != (side, side):
        prompt_image = prompt_image.resized(side, side)
        prompt_mask = prompt_mask.resized_nearest(side, side)
    binary = ClassMask((prompt_mask.ids == class_id).astype(np.uint8) * class_id)
    annotation = render_mask(binary, palette)

    def label(image_id: str, image: ImageBuffer) -> ClassMask:
        native = (image.height, image.width)
        if native != (side, side):
            image = image.resized(side, side)
        mask = infer(model, (prompt_image, annotation), image,
                     PromptKind.FULL_MASK, palette, tol=tol)
        if native != (side, side):
            mask = mask.resized_nearest(*native)
        return mask

    return label


def _downstream_train(manifest: DatasetManifest, pairs, model_cfg: ModelConfig,
                      epochs: int, lr: float, batch_size: int, seed: int,
                      pipeline: PipelineConfig):
    """Train a fresh downstream model on (image_id, image, mask) pairs."""
    rng = Rng(seed)
    model = init_model(model_cfg)
    sampler = _PairSampler(manifest, pairs, pipeline, model_cfg, rng)
    steps = epochs * math.ceil(len(pairs) / batch_size)
    stage = StageConfig(stage=1, epochs=epochs, learning_rate=lr,
                        batch_size=batch_size)
    state = OptimizerState.zeros_like(model)
    for step in range(steps):
        examples = [sampler.sample() for _ in range(batch_size)]
        plans = [
            inference_plan(model_cfg) if rng.random() < stage.query_plan_frac
            else random_plan(model_cfg, rng)
            for _ in examples
        ]
        lr_t = _lr_schedule(step, steps, stage)
        model, state, _ = train_step(model, examples, plans, state,
                                     TrainHyper(lr=lr_t, momentum=0.9))
    return model


class _PairSampler(ExampleSampler):
    """ExampleSampler over in-memory pairs instead of manifest files."""

    def __init__(self, manifest, pairs, pipeline, model_cfg, rng):
        # bypass file loading: seed the parent fields by hand
        self.manifest = manifest
        self.config = pipeline
        self.canvas_side = model_cfg.canvas_side
        self.patch_size = model_cfg.patch_size
        self.rng = rng
        self.allow_scribble = False
        self.allow_suppression = False
        self.max_composite_attempts = 8
        self.counters = {"full_mask": 0, "scribble": 0, "suppressed": 0, "composite": 0}
        self._pairs = [(pid, img, mask) for pid, img, mask in pairs]
        self._grid_ns = sorted(n for n in pipeline.grid_weights
                               if pipeline.grid_weights[n] > 0
                               and model_cfg.canvas_side % n == 0)
        self._grid_p = np.asarray(
            [pipeline.grid_weights[n] for n in self._grid_ns], dtype=np.float64
        )
        self._grid_p /= self._grid_p.sum()
        self._instances = []
        for i, (_, _, mask) in enumerate(self._pairs):
            for inst in extract_instances(mask):
                self._instances.append((i, inst))


def compare_label_sources(manifest: DatasetManifest, labeler, split_ratio: float,
                          rng: Rng, class_id: int = 1,
                          model_cfg: ModelConfig | None = None,
                          epochs: int = 2, lr: float = 1.0, batch_size: int = 8,
                          pipeline: PipelineConfig | None = None,
                          criteria: CoverageCriteria | None = None) -> ExperimentResult:
    """Train one downstream model per label source and score both on the same
    held-out split.

    `labeler` is any callable (image_id, image) -> ClassMask; use
    `model_labeler` to wrap a trained checkpoint. Stream A uses the
    manifest's own (human) masks for the training split; stream B replaces
    them with the labeler's output; both downstream models share
    architecture, seeds and schedule, so any metric gap is attributable to
    label quality alone.
    """
    from .datapipe import load_labeled_pair

    if not 0.0 < split_ratio < 1.0:
        raise ValueError("split_ratio must lie strictly between 0 and 1")
    model_cfg = model_cfg or ModelConfig()
    pipeline = pipeline or PipelineConfig(composite_fraction=0.0)
    labeled = [e for e in manifest.entries if e.mask_path]
    if len(labeled) < 4:
        raise InvalidSpec("need at least 4 labeled entries to split")
    order = list(rng.permutation(len(labeled)))
    cut = max(2, int(round(split_ratio * len(labeled))))
    cut = min(cut, len(labeled) - 2)
    train_entries = [labeled[i] for i in order[:cut]]
    test_entries = [labeled[i] for i in order[cut:]]

    train_pairs_human, train_pairs_auto = [], []
    for e in train_entries:
        image, mask = load_labeled_pair(manifest, e)
        train_pairs_human.append((e.image_id, image, mask))
        train_pairs_auto.append((e.image_id, image, labeler(e.image_id, image)))

    seed = int(rng.integers(2 ** 31))
    downstream_human = _downstream_train(
        manifest, train_pairs_human, model_cfg, epochs, lr, batch_size, seed, pipeline)
    downstream_auto = _downstream_train(
        manifest, train_pairs_auto, model_cfg, epochs, lr, batch_size, seed, pipeline)

    # both downstream models label the shared test split from the same prompt
    side = model_cfg.canvas_side
    prompt_id, prompt_image, prompt_mask_h = train_pairs_human[0]
    if (prompt_image.height, prompt_image.width) != (side, side):
        prompt_image = prompt_image.resized(side, side)
    test_pairs = [load_labeled_pair(manifest, e) for e in test_entries]
    reports = []
    for downstream, prompt_mask in ((downstream_human, prompt_mask_h),
                                    (downstream_auto, train_pairs_auto[0][2])):
        if (prompt_mask.height, prompt_mask.width) != (side, side):
            prompt_mask = prompt_mask.resized_nearest(side, side)
        binary = ClassMask((prompt_mask.ids == class_id).astype(np.uint8) * class_id)
        annotation = render_mask(binary, manifest.palette)
        preds = []
        for image, _ in test_pairs:
            native = (image.height, image.width)
            query = image if native == (side, side) else image.resized(side, side)
            pred = infer(downstream, (prompt_image, annotation), query,
                         PromptKind.FULL_MASK, manifest.palette)
            if native != (side, side):
                pred = pred.resized_nearest(*native)
            preds.append(pred)
        reports.append(evaluate(
            preds, [m for _, m in test_pairs], class_id,
            criteria=criteria, image_ids=[e.image_id for e in test_entries],
        ))
    return ExperimentResult(human=reports[0], auto=reports[1], class_id=class_id)
