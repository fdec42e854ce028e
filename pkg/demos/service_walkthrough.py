"""Drive the HTTP API end to end, in-process.

Uploads a dataset, opens a session, draws a scribble prompt, runs an
auto-label job, reviews the proposals, and downloads the export archive —
the exact calls a browser frontend makes, minus the browser.

Run:  python3 demos/service_walkthrough.py
"""
import io
import json
import tempfile
import time
import zipfile
from pathlib import Path

from fastapi.testclient import TestClient

from seglabel.model import ModelConfig, init_model, save_checkpoint_file
from seglabel.service import create_app
from seglabel.synth import DefectClassSpec, SyntheticSpec, generate_synthetic

work = Path(tempfile.mkdtemp(prefix="seglabel-demo-"))
print(f"working under {work}")

# a small dataset: 6 labeled images (the masks double as ground truth)
spec = SyntheticSpec(
    classes=(DefectClassSpec("blotch", "block", size_range=(16, 24),
                             color=(215, 195, 65), grid_snap=8),),
    counts={"train": 6},
    seed=77,
)
manifest = generate_synthetic(spec, work / "dataset")
buf = io.BytesIO()
with zipfile.ZipFile(buf, "w") as zf:
    zf.write(work / "dataset" / "manifest.json", "manifest.json")
    for e in manifest.entries:
        zf.write(work / "dataset" / e.image_path, e.image_path)
        if e.mask_path and e.image_id == "train-0000":
            zf.write(work / "dataset" / e.mask_path, e.mask_path)  # one labeled
# strip the other masks from the manifest so those items need labeling
doc = json.loads((work / "dataset" / "manifest.json").read_text())
for entry in doc["entries"]:
    if entry["image_id"] != "train-0000":
        entry.pop("mask_path", None)
archive = io.BytesIO()
with zipfile.ZipFile(archive, "w") as zf:
    zf.writestr("manifest.json", json.dumps(doc))
    src = zipfile.ZipFile(buf)
    for name in src.namelist():
        if name != "manifest.json":
            zf.writestr(name, src.read(name))

ckpt = work / "model.ckpt"
save_checkpoint_file(init_model(ModelConfig(seed=5)), ckpt)

app = create_app(work / "data", model_path=ckpt)
client = TestClient(app)

dataset_id = client.post(
    "/datasets", files={"archive": ("ds.zip", archive.getvalue())}
).json()["dataset_id"]
print("dataset:", dataset_id)

session_id = client.post("/sessions", json={"dataset_id": dataset_id}).json()["session_id"]
print("session:", session_id, "->", client.get(f"/sessions/{session_id}").json()["counts"])

prompt = client.post(f"/sessions/{session_id}/prompts", json={
    "image_id": "train-0000",
    "class_id": 1,
    "strokes": [{"points": [[20, 24], [36, 24]], "radius": 1}],
}).json()
print("prompt:", prompt)

job = client.post(f"/sessions/{session_id}/jobs", json={
    "kind": "autolabel",
    "prompt_id": prompt["prompt_id"],
    "item_ids": [f"train-{i:04d}" for i in range(1, 6)],
}).json()
while job["state"] not in ("done", "failed"):
    time.sleep(0.1)
    job = client.get(f"/jobs/{job['job_id']}").json()
print("job:", job["state"], "result:", job["result"])

pending = client.get(f"/sessions/{session_id}/items",
                     params={"item_state": "PendingReview"}).json()
for i, item in enumerate(pending["items"]):
    verdict = "approve" if i % 2 == 0 else "reject"
    r = client.post(f"/sessions/{session_id}/reviews",
                    json={"item_id": item["image_id"], "verdict": verdict}).json()
    print(f"review {item['image_id']}: {verdict} -> {r['state']}")

export = client.get(f"/sessions/{session_id}/export")
names = zipfile.ZipFile(io.BytesIO(export.content)).namelist()
print(f"export: {len(export.content)} bytes, "
      f"{sum(1 for n in names if n.startswith('images/'))} accepted pairs")
print("final stats:", client.get(f"/sessions/{session_id}").json()["counts"])
