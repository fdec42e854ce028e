"""Command-line entry points.

    seglabel serve --port 8000 --data-dir ./data [--model ckpt] [--seed 0]
    seglabel synth --spec spec.json --out ./dataset
    seglabel train --stage 1 --config train.json
    seglabel experiment compare --config experiment.json
    seglabel pipeline preview --manifest ./dataset/manifest.json --out ./preview

Environment overrides: SEGLABEL_PORT, SEGLABEL_DATA_DIR, SEGLABEL_TOKEN.

Train config schema (JSON):
    {
      "manifest": "path/to/manifest.json",
      "model": {"canvas_side": 64, "patch_size": 8, "embed_dim": 64,
                 "depth": 4, "heads": 4, "seed": 0},
      "checkpoint_in": null | "warm-start.ckpt",
      "checkpoint_out": "stageN.ckpt",
      "stats_out": "stageN.jsonl",
      "seed": 0,
      "pipeline": { ...PipelineConfig keys... },
      "stage": { "epochs": 3, "learning_rate": 1.0, "batch_size": 8,
                  "suppression": false, "scribble": false, ... }
    }

Experiment config schema (JSON):
    {
      "manifest": "path/to/manifest.json",
      "labeler_checkpoint": "stage2.ckpt",
      "prompt_image_id": "train-0000",
      "class_id": 1,
      "split_ratio": 0.75,
      "seed": 0,
      "downstream": {"epochs": 2, "learning_rate": 1.0, "batch_size": 8},
      "result_out": "experiment.json"
    }
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


def _cmd_serve(args):
    import uvicorn

    from .service import create_app

    port = int(os.environ.get("SEGLABEL_PORT", args.port))
    data_dir = os.environ.get("SEGLABEL_DATA_DIR", args.data_dir)
    token = os.environ.get("SEGLABEL_TOKEN", args.token)
    app = create_app(data_dir, model_path=args.model, seed=args.seed,
                     token=token, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=port, log_level="info")


def _cmd_synth(args):
    from .synth import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec.from_file(args.spec)
    manifest = generate_synthetic(spec, args.out)
    print(f"wrote {len(manifest.entries)} images to {args.out}")


def _cmd_train(args):
    from .datapipe import PipelineConfig
    from .manifest import load_manifest
    from .model import (ModelConfig, init_model, load_checkpoint_file,
                        save_checkpoint_file)
    from .rng import Rng
    from .trainer import StageConfig, run_stage

    doc = json.loads(Path(args.config).read_text())
    manifest = load_manifest(doc["manifest"])
    if doc.get("checkpoint_in"):
        model = load_checkpoint_file(doc["checkpoint_in"])
    else:
        model = init_model(ModelConfig(**doc.get("model", {})))
    stage_doc = dict(doc.get("stage", {}))
    stage_doc["stage"] = args.stage
    if args.stage == 2:
        stage_doc.setdefault("suppression", True)
        stage_doc.setdefault("scribble", True)
        stage_doc.setdefault("epochs", 2)
    else:
        stage_doc.setdefault("epochs", 3)
    stage = StageConfig(**stage_doc)
    pipeline = PipelineConfig.from_jsonable(doc.get("pipeline", {}))
    rng = Rng(int(doc.get("seed", 0)))
    model, history = run_stage(model, stage, manifest, rng, pipeline=pipeline,
                               stats_path=doc.get("stats_out"))
    out = doc.get("checkpoint_out", f"stage{args.stage}.ckpt")
    save_checkpoint_file(model, out)
    last = history[-1]["loss"] if history else float("nan")
    print(f"stage {args.stage}: {len(history)} steps, final loss {last:.5f}, "
          f"checkpoint -> {out}")


def _cmd_experiment_compare(args):
    from .manifest import load_manifest
    from .model import load_checkpoint_file
    from .rng import Rng
    from .trainer import compare_label_sources, model_labeler

    doc = json.loads(Path(args.config).read_text())
    manifest = load_manifest(doc["manifest"])
    model = load_checkpoint_file(doc["labeler_checkpoint"])
    class_id = int(doc.get("class_id", 1))
    labeler = model_labeler(model, manifest, doc["prompt_image_id"], class_id)
    downstream = doc.get("downstream", {})
    result = compare_label_sources(
        manifest, labeler,
        split_ratio=float(doc.get("split_ratio", 0.75)),
        rng=Rng(int(doc.get("seed", 0))),
        class_id=class_id,
        model_cfg=model.cfg,
        epochs=int(downstream.get("epochs", 2)),
        lr=float(downstream.get("learning_rate", 1.0)),
        batch_size=int(downstream.get("batch_size", 8)),
    )
    out = doc.get("result_out", "experiment.json")
    Path(out).write_text(json.dumps(result.to_jsonable(), indent=2) + "\n")
    print(f"human mean IoU {result.human.mean_iou:.3f} | "
          f"auto mean IoU {result.auto.mean_iou:.3f} | "
          f"gap {result.mean_iou_gap:.3f} -> {out}")


def _cmd_pipeline_preview(args):
    from .datapipe import PipelineConfig, preview_samples
    from .manifest import load_manifest
    from .rng import Rng

    manifest = load_manifest(args.manifest)
    pipeline = (PipelineConfig.from_file(args.config) if args.config
                else PipelineConfig())
    written = preview_samples(manifest, pipeline, Rng(args.seed), args.out,
                              count=args.count, canvas_side=args.canvas_side)
    print(f"wrote {len(written)} previews to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seglabel",
                                     description="in-context auto-labeling workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--data-dir", default="./seglabel-data")
    p.add_argument("--model", default=None, help="checkpoint to load at startup")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--token", default=None, help="shared bearer token")
    p.add_argument("--static-dir", default=None, help="frontend bundle to serve at /")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("experiment", help="experiment harnesses")
    esub = p.add_subparsers(dest="experiment_command", required=True)
    pc = esub.add_parser("compare", help="human-vs-auto label comparison")
    pc.add_argument("--config", required=True)
    pc.set_defaults(fn=_cmd_experiment_compare)

    p = sub.add_parser("pipeline", help="data pipeline tools")
    psub = p.add_subparsers(dest="pipeline_command", required=True)
    pp = psub.add_parser("preview", help="write sample composites/canvases as PNGs")
    pp.add_argument("--manifest", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--config", default=None, help="pipeline config JSON")
    pp.add_argument("--count", type=int, default=4)
    pp.add_argument("--canvas-side", type=int, default=64)
    pp.add_argument("--seed", type=int, default=0)
    pp.set_defaults(fn=_cmd_pipeline_preview)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
