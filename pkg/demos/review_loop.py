"""The accept/reject labeling loop, driven by a mock model.

Ten unlabeled items, three prompts, a labeler that is right most of the time
and a reviewer that approves good proposals: every item ends Accepted or
ManualRequired, and replaying the event log rebuilds the identical session.

Run:  python3 demos/review_loop.py
"""
import numpy as np

from seglabel.datapipe import PromptKind
from seglabel.manifest import DatasetManifest, ManifestEntry
from seglabel.metrics import iou, point_set
from seglabel.rasters import ClassMask
from seglabel.rng import Rng
from seglabel.workflow import (ItemState, PromptRecord, SessionConfig,
                               add_prompt, create_session, replay_events,
                               run_autolabel, session_stats, submit_review)

rng = Rng(2024)


def blob(cy, cx, radius=4, side=24):
    yy, xx = np.mgrid[0:side, 0:side]
    ids = ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius).astype(np.uint8)
    return ClassMask(ids)


# ground truth the mock labeler is "trying" to find
truth = {f"img-{i}": blob(6 + i, 6 + i) for i in range(10)}

manifest = DatasetManifest(
    dataset_id="demo",
    class_names=("background", "blob"),
    entries=tuple(ManifestEntry(image_id=f"img-{i}", image_path=f"{i}.png")
                  for i in range(10)),
)
session = create_session(manifest, SessionConfig(max_prompt_attempts=3))
prompts = [
    PromptRecord(prompt_id=f"p{k}", image_id="img-0", annotation=blob(8, 8, 2),
                 kind=PromptKind.SCRIBBLE, class_id=1)
    for k in range(3)
]
for p in prompts:
    add_prompt(session, p)


def mock_labeler(prompt, image_id):
    """Mostly accurate; sometimes off-center, which the reviewer rejects."""
    good = rng.random() < 0.7
    center = 6 + int(image_id.split("-")[1])
    jitter = 0 if good else 9
    return blob(center + jitter, center)


round_no = 0
while True:
    eligible = [iid for iid, it in sorted(session.items.items())
                if it.state in (ItemState.UNLABELED, ItemState.REJECTED)]
    if not eligible:
        break
    prompt = next((p for p in prompts
                   if any(p.prompt_id not in session.items[i].attempted_prompt_ids
                          for i in eligible)), None)
    if prompt is None:
        break
    batch = [i for i in eligible
             if prompt.prompt_id not in session.items[i].attempted_prompt_ids]
    session, skipped = run_autolabel(session, prompt, batch, mock_labeler)
    for iid in batch:
        candidate = session.items[iid].candidate_mask
        score = iou(point_set(candidate, 1), point_set(truth[iid], 1))
        verdict = "approve" if score > 0.6 else "reject"
        submit_review(session, iid, verdict)
    round_no += 1
    counts = session.state_counts()
    print(f"round {round_no} ({prompt.prompt_id}): {counts}")

stats = session_stats(session, truths=truth)
print(f"\nacceptance rate: {stats['acceptance_rate']:.2f}")
if "quality" in stats:
    print(f"accepted-mask quality: mean IoU {stats['quality']['mean_iou']:.3f}, "
          f"coverage {stats['quality']['coverage_rate']:.2f}")

replayed = replay_events(session.events)
print(f"event-log replay matches live state: "
      f"{replayed.state_hash() == session.state_hash()} "
      f"({len(session.events)} events)")
