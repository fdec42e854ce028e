"""seglabel: a prompt-driven in-context auto-labeling workbench.

A human annotates one reference image (a full mask or just a scribble), a
small from-scratch vision transformer proposes masks for the remaining
images by in-context inference, and a reviewer accepts or rejects each
proposal until the dataset is labeled. The library covers the full loop:

- `rasters`, `palette`, `instances`, `manifest`, `rng`: shared value types.
- `metrics`: IoU, exact Hausdorff distance, recall and coverage reporting.
- `datapipe`: zoom crops, grid composites, dynamic color assignment, class
  suppression, scribble synthesis and canvas assembly.
- `model`: the masked-reconstruction transformer, its exact gradients,
  training step and checkpoint format.
- `synth`, `trainer`: synthetic defect corpora, the two-stage schedule and
  the label-source comparison experiment.
- `workflow`: the review-loop state machine with an event-sourced log.
- `service`: the HTTP facade and job runner the browser UI talks to.
"""

from . import datapipe, instances, manifest, metrics, model, palette, rasters, rng
from .datapipe import (PipelineConfig, PromptKind, TrainExample, adaptive_crop,
                       apply_suppression, assign_colors, build_train_example,
                       compose_grid, mix_batches, synthesize_scribble)
from .instances import DefectInstance, extract_instances
from .manifest import DatasetManifest, load_manifest
from .metrics import (CoverageCriteria, MetricReport, directed_hausdorff,
                      evaluate, hausdorff, iou, point_set)
from .model import (Model, ModelConfig, OcclusionPlan, forward, infer,
                    init_model, load_checkpoint, loss, save_checkpoint,
                    train_step)
from .palette import ColorPalette, decode_mask, render_mask
from .rasters import ClassMask, ImageBuffer
from .rng import Rng

__version__ = "0.1.0"
