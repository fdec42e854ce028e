"""Visual tour of the training-data pipeline.

Generates a small synthetic defect dataset, then writes PNGs for each
construction: adaptive zoom crops, grid composites, dynamic color
renderings, class suppression, scribbles, and full stacked canvases.

Run:  python3 demos/pipeline_gallery.py        (writes demos/out/pipeline/)
"""
from pathlib import Path

from seglabel.datapipe import (ExampleSampler, GridConfig, PipelineConfig,
                               adaptive_crop, assign_colors, compose_grid,
                               load_labeled_pair, preview_samples,
                               synthesize_scribble)
from seglabel.instances import extract_instances
from seglabel.palette import render_mask
from seglabel.rng import Rng
from seglabel.synth import DefectClassSpec, SyntheticSpec, generate_synthetic

out = Path(__file__).parent / "out" / "pipeline"
out.mkdir(parents=True, exist_ok=True)
data_dir = out / "dataset"

spec = SyntheticSpec(
    classes=(
        DefectClassSpec("blob", "blob", size_range=(6, 9)),
        DefectClassSpec("scratch", "scratch", size_range=(7, 9), color=(15, 15, 110)),
    ),
    counts={"train": 8},
    seed=7,
)
manifest = generate_synthetic(spec, data_dir)
print(f"synthetic dataset: {len(manifest.entries)} images under {data_dir}")

rng = Rng(99)
image, mask = load_labeled_pair(manifest, manifest.entries[0])
image.save_png(out / "base_image.png")
render_mask(mask, manifest.palette).save_png(out / "base_mask.png")

# adaptive crops: the same instance at three zoom levels
inst = extract_instances(mask)[0]
for margin in (0.25, 1.0, 3.0):
    crop = adaptive_crop(image, mask, inst, margin, 32, rng,
                         margin_range=(0.0, 3.0))
    crop.image.save_png(out / f"crop_margin_{margin}.png")

# a 2x2 composite of random zoomed instances
instances = []
for entry in manifest.entries:
    img, msk = load_labeled_pair(manifest, entry)
    for i in extract_instances(msk):
        instances.append((img, msk, i))
grid = GridConfig(n=2, canvas_side=64)
crops = []
for k in range(4):
    img, msk, i = instances[int(rng.integers(len(instances)))]
    crops.append(adaptive_crop(img, msk, i, None, grid.cell_side, rng))
comp_img, comp_mask = compose_grid(crops, grid, min_defect_pixels=16)
comp_img.save_png(out / "composite_2x2.png")

# dynamic colors: the same composite mask under three random palettes
for seed in range(3):
    palette = assign_colors(2, Rng(seed))
    render_mask(comp_mask, palette).save_png(out / f"composite_colors_{seed}.png")
    print(f"palette {seed}: {palette.colors[1:]}")

# a scribble inside one instance
scribble = synthesize_scribble(inst, mask, rng)
render_mask(scribble.to_mask(mask.height, mask.width),
            manifest.palette).save_png(out / "scribble.png")
print(f"scribble: {len(scribble.pixels)} px of a "
      f"{inst.pixel_count} px instance")

# end-to-end: sample full train canvases (both prompt kinds, suppression on)
pipeline = PipelineConfig(drop_prob=0.5, scribble_fraction=0.5,
                          composite_fraction=0.4, min_defect_pixels=16)
written = preview_samples(manifest, pipeline, Rng(5), out / "canvases",
                          count=6, canvas_side=64)
print(f"wrote {len(written)} canvas previews to {out / 'canvases'}")
