"""Watch the model memorize a tiny corpus, then label it by example.

Eight images with one grid-aligned block defect each; the model trains on
reference/query pairs and is then asked to label each image given a single
annotated reference. Writes side-by-side PNGs under demos/out/overfit/.

Run:  python3 demos/train_overfit.py       (~2 minutes on one CPU core)
"""
import time
from pathlib import Path

import numpy as np

from seglabel.datapipe import PromptKind, build_train_example, load_labeled_pair
from seglabel.metrics import iou, point_set
from seglabel.model import (ModelConfig, OptimizerState, TrainHyper,
                            inference_plan, infer, init_model, random_plan,
                            train_step)
from seglabel.palette import ColorPalette, render_mask
from seglabel.rasters import ImageBuffer
from seglabel.rng import Rng
from seglabel.synth import DefectClassSpec, SyntheticSpec, generate_synthetic

out = Path(__file__).parent / "out" / "overfit"
out.mkdir(parents=True, exist_ok=True)

spec = SyntheticSpec(
    classes=(DefectClassSpec("blotch", "block", size_range=(16, 24),
                             color=(215, 195, 65), grid_snap=8),),
    counts={"train": 8},
    seed=100,
)
manifest = generate_synthetic(spec, out / "dataset")
pairs = [load_labeled_pair(manifest, e) for e in manifest.entries]
palette = ColorPalette(((0, 0, 0), (255, 0, 0)))

cfg = ModelConfig(seed=0)
rng = Rng(11)
examples = [
    build_train_example(pairs[i], pairs[(i + 1) % 8], palette,
                        PromptKind.FULL_MASK, rng)
    for i in range(8)
]

model = init_model(cfg)
state = OptimizerState.zeros_like(model)
steps, lr0 = 500, 1.2
t0 = time.time()
for t in range(steps):
    if t < 30:
        lr = lr0 * (t + 1) / 30
    elif t >= 250:
        lr = max(0.02, lr0 * (steps - t) / (steps - 250))
    else:
        lr = lr0
    plans = [inference_plan(cfg) if rng.random() < 0.5 else random_plan(cfg, rng)
             for _ in examples]
    model, state, stats = train_step(model, examples, plans, state,
                                     TrainHyper(lr=lr))
    if (t + 1) % 100 == 0:
        print(f"step {t + 1:3d}: loss {stats['loss']:.5f} "
              f"({time.time() - t0:.0f}s)")

print("\nlabeling every image from its cyclic reference:")
for i in range(8):
    ref_img, ref_mask = pairs[i]
    query_img, query_mask = pairs[(i + 1) % 8]
    pred = infer(model, (ref_img, render_mask(ref_mask, palette)), query_img,
                 PromptKind.FULL_MASK, palette)
    score = iou(point_set(pred, 1), point_set(query_mask, 1))
    print(f"  pair {i}: IoU {score:.3f}")
    panel = np.concatenate([query_img.pixels,
                            render_mask(query_mask, palette).pixels,
                            render_mask(pred, palette).pixels], axis=1)
    ImageBuffer(panel).save_png(out / f"pair_{i}_image_truth_pred.png")
print(f"\npanels written to {out}")
