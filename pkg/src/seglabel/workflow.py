"""The iterative auto-labeling loop as an event-sourced state machine.

Each unlabeled image is a WorkItem walking a fixed transition table:

    Unlabeled ----autolabel----> PendingReview --approve--> Accepted
    Rejected  ----autolabel----> PendingReview --reject---> Rejected
                                 PendingReview --reject---> ManualRequired
                                   (when prompts or attempts are exhausted)

A prompt may be tried at most once per item, ever; rejected items go back to
the pool and wait for a different prompt. ManualRequired is the escape hatch
that keeps the loop bounded once every prompt has failed an item.

Every mutation is an event; replaying the event list rebuilds the identical
session (the service persists the events as line-delimited JSON and relies
on this for crash recovery).
"""
from __future__ import annotations

import base64
import hashlib
import json
import time
from dataclasses import dataclass, field
from enum import Enum

from .datapipe import PromptKind
from .errors import EmptyDataset, EmptySet, InvalidTransition
from .manifest import DatasetManifest
from .metrics import CoverageCriteria, evaluate
from .rasters import ClassMask


class ItemState(str, Enum):
    UNLABELED = "Unlabeled"
    PENDING_REVIEW = "PendingReview"
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    MANUAL_REQUIRED = "ManualRequired"


_ALLOWED = {
    (ItemState.UNLABELED, ItemState.PENDING_REVIEW),
    (ItemState.REJECTED, ItemState.PENDING_REVIEW),
    (ItemState.PENDING_REVIEW, ItemState.ACCEPTED),
    (ItemState.PENDING_REVIEW, ItemState.REJECTED),
    (ItemState.PENDING_REVIEW, ItemState.MANUAL_REQUIRED),
}


def _mask_to_b64(mask: ClassMask) -> str:
    return base64.b64encode(mask.png_bytes()).decode("ascii")


def _mask_from_b64(text: str) -> ClassMask:
    return ClassMask.from_png_bytes(base64.b64decode(text))


def mask_hash(mask: ClassMask) -> str:
    return hashlib.sha256(mask.ids.tobytes()).hexdigest()


@dataclass
class WorkItem:
    image_id: str
    state: ItemState = ItemState.UNLABELED
    attempted_prompt_ids: set = field(default_factory=set)
    candidate_mask: ClassMask | None = None
    accepted_hash: str | None = None
    history: list = field(default_factory=list)  # (event, timestamp, actor)

    def _move(self, new_state: ItemState):
        if (self.state, new_state) not in _ALLOWED:
            raise InvalidTransition(
                f"{self.image_id}: {self.state.value} -> {new_state.value}"
            )
        self.state = new_state


@dataclass(frozen=True)
class PromptRecord:
    """One human-made prompt: an image plus its (scribble or full) annotation."""

    prompt_id: str
    image_id: str
    annotation: ClassMask
    kind: PromptKind
    class_id: int
    creator: str = "annotator"

    def __post_init__(self):
        if self.annotation.foreground_count() == 0:
            raise EmptySet("prompt annotation must be nonempty")


@dataclass(frozen=True)
class SessionConfig:
    batch_size: int = 8
    max_prompt_attempts: int = 5


class LabelingSession:
    """All per-dataset labeling state, reconstructible from its event log."""

    def __init__(self, dataset_id: str, config: SessionConfig = SessionConfig(),
                 clock=None):
        self.dataset_id = dataset_id
        self.config = config
        self.items: dict[str, WorkItem] = {}
        self.prompts: dict[str, PromptRecord] = {}
        self.events: list[dict] = []
        self.criteria = CoverageCriteria()
        self._idempotency: dict[str, dict] = {}
        self._clock = clock or time.time

    # -- event plumbing ------------------------------------------------------

    def _record(self, event: dict) -> dict:
        event = {**event, "ts": float(self._clock())}
        self.events.append(event)
        return event

    def state_counts(self) -> dict:
        counts = {s.value: 0 for s in ItemState}
        for item in self.items.values():
            counts[item.state.value] += 1
        assert sum(counts.values()) == len(self.items)
        return counts

    def state_hash(self) -> str:
        """Digest of the observable session state (not the event history)."""
        doc = {
            "dataset_id": self.dataset_id,
            "items": {
                iid: {
                    "state": it.state.value,
                    "attempted": sorted(it.attempted_prompt_ids),
                    "candidate": mask_hash(it.candidate_mask) if it.candidate_mask else None,
                    "accepted_hash": it.accepted_hash,
                }
                for iid, it in sorted(self.items.items())
            },
            "prompts": sorted(self.prompts),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def verify_accepted(self, image_id: str) -> bool:
        """Re-check that an accepted mask still matches its acceptance hash."""
        item = self.items[image_id]
        if item.state != ItemState.ACCEPTED:
            raise InvalidTransition(f"{image_id} is not Accepted")
        return item.candidate_mask is not None and mask_hash(item.candidate_mask) == item.accepted_hash


def create_session(manifest: DatasetManifest, config: SessionConfig = SessionConfig(),
                   clock=None) -> LabelingSession:
    """Start a session: unmasked entries become Unlabeled work items and
    already-masked entries enter as pre-Accepted."""
    if not manifest.entries:
        raise EmptyDataset(f"dataset {manifest.dataset_id} has no entries")
    session = LabelingSession(manifest.dataset_id, config, clock=clock)
    prelabeled = []
    for entry in manifest.entries:
        item = WorkItem(image_id=entry.image_id)
        if entry.mask_path:
            item.state = ItemState.ACCEPTED
            prelabeled.append(entry.image_id)
        session.items[entry.image_id] = item
    session._record({
        "type": "session_created",
        "dataset_id": manifest.dataset_id,
        "image_ids": [e.image_id for e in manifest.entries],
        "prelabeled": prelabeled,
        "config": {"batch_size": config.batch_size,
                   "max_prompt_attempts": config.max_prompt_attempts},
    })
    return session


def add_prompt(session: LabelingSession, prompt: PromptRecord) -> LabelingSession:
    if prompt.image_id not in session.items:
        raise KeyError(f"prompt references unknown image {prompt.image_id}")
    if prompt.prompt_id in session.prompts:
        raise ValueError(f"duplicate prompt id {prompt.prompt_id}")
    session.prompts[prompt.prompt_id] = prompt
    session._record({
        "type": "prompt_added",
        "prompt_id": prompt.prompt_id,
        "image_id": prompt.image_id,
        "kind": prompt.kind.value,
        "class_id": prompt.class_id,
        "creator": prompt.creator,
        "annotation_png": _mask_to_b64(prompt.annotation),
    })
    return session


def run_autolabel(session: LabelingSession, prompt: PromptRecord, item_ids,
                  labeler) -> tuple:
    """Propose masks for a batch of items with one prompt.

    `labeler(prompt, image_id) -> ClassMask` supplies the model inference.
    Eligible items (Unlabeled or Rejected, prompt unseen) move to
    PendingReview with a candidate mask; the rest are skipped and reported.
    The whole batch commits as a single event, so a crash mid-batch leaves
    no partial state behind. Returns (session, skip report).
    """
    if prompt.prompt_id not in session.prompts:
        add_prompt(session, prompt)
    results, skipped = [], []
    for image_id in item_ids:
        item = session.items.get(image_id)
        if item is None:
            skipped.append({"image_id": image_id, "reason": "unknown_item"})
            continue
        if item.state not in (ItemState.UNLABELED, ItemState.REJECTED):
            skipped.append({"image_id": image_id, "reason": "invalid_state"})
            continue
        if prompt.prompt_id in item.attempted_prompt_ids:
            skipped.append({"image_id": image_id, "reason": "prompt_exhausted"})
            continue
        mask = labeler(prompt, image_id)
        results.append((image_id, mask))
    event = session._record({
        "type": "autolabel_committed",
        "prompt_id": prompt.prompt_id,
        "results": [
            {"image_id": iid, "mask_png": _mask_to_b64(mask)} for iid, mask in results
        ],
        "skipped": skipped,
    })
    _apply_autolabel(session, event)
    return session, skipped


def _apply_autolabel(session: LabelingSession, event: dict):
    prompt_id = event["prompt_id"]
    for row in event["results"]:
        item = session.items[row["image_id"]]
        item._move(ItemState.PENDING_REVIEW)
        item.candidate_mask = _mask_from_b64(row["mask_png"])
        item.attempted_prompt_ids.add(prompt_id)
        item.history.append(("autolabel", event["ts"], prompt_id))


def submit_review(session: LabelingSession, image_id: str, verdict: str,
                  reviewer: str = "reviewer", idempotency_key: str | None = None):
    """Record a human verdict on a PendingReview item.

    approve freezes the candidate mask (hash recorded; any later mutation is
    detectable). reject clears it and returns the item to the pool, unless
    every known prompt has been attempted or the attempt cap is reached, in
    which case the item lands in ManualRequired for hand annotation.
    """
    if verdict not in ("approve", "reject"):
        raise ValueError(f"unknown verdict {verdict!r}")
    if idempotency_key is not None and idempotency_key in session._idempotency:
        return session.items[session._idempotency[idempotency_key]["image_id"]]
    item = session.items.get(image_id)
    if item is None:
        raise KeyError(image_id)
    if item.state != ItemState.PENDING_REVIEW:
        raise InvalidTransition(
            f"review needs PendingReview, {image_id} is {item.state.value}"
        )
    event = session._record({
        "type": "review_submitted",
        "image_id": image_id,
        "verdict": verdict,
        "reviewer": reviewer,
        "idempotency_key": idempotency_key,
    })
    _apply_review(session, event)
    return item


def _apply_review(session: LabelingSession, event: dict):
    item = session.items[event["image_id"]]
    verdict = event["verdict"]
    if verdict == "approve":
        item._move(ItemState.ACCEPTED)
        item.accepted_hash = mask_hash(item.candidate_mask)
    else:
        exhausted = (
            len(item.attempted_prompt_ids) >= len(session.prompts)
            or len(item.attempted_prompt_ids) >= session.config.max_prompt_attempts
        )
        item._move(ItemState.MANUAL_REQUIRED if exhausted else ItemState.REJECTED)
        item.candidate_mask = None
    item.history.append((f"review:{verdict}", event["ts"], event["reviewer"]))
    if event.get("idempotency_key"):
        session._idempotency[event["idempotency_key"]] = {"image_id": event["image_id"]}


def session_stats(session: LabelingSession, truths: dict | None = None,
                  class_id: int = 1) -> dict:
    """Pure read: state counts, acceptance rate, and (with ground truth)
    quality metrics of the accepted masks."""
    counts = session.state_counts()
    total = len(session.items)
    accepted = counts[ItemState.ACCEPTED.value]
    stats = {
        "dataset_id": session.dataset_id,
        "total": total,
        "counts": counts,
        "acceptance_rate": accepted / total if total else 0.0,
        "prompts": len(session.prompts),
    }
    if truths:
        preds, gt, ids = [], [], []
        for iid, item in sorted(session.items.items()):
            if item.state == ItemState.ACCEPTED and item.candidate_mask is not None \
                    and iid in truths:
                preds.append(item.candidate_mask)
                gt.append(truths[iid])
                ids.append(iid)
        if preds:
            report = evaluate(preds, gt, class_id, criteria=session.criteria,
                              image_ids=ids)
            stats["quality"] = report.to_jsonable()["aggregates"]
            stats["quality"]["coverage_rate"] = report.coverage_rate
            stats["quality"]["ious"] = [r.iou for r in report.records]
    return stats


# ---------------------------------------------------------------------------
# event-log persistence and replay


def replay_events(events, clock=None) -> LabelingSession:
    """Rebuild a session from its event list. Replay is total: the returned
    session is indistinguishable (state hash included) from the original."""
    it = iter(events)
    try:
        first = next(it)
    except StopIteration:
        raise EmptyDataset("event log is empty") from None
    if first["type"] != "session_created":
        raise ValueError("event log must start with session_created")
    config = SessionConfig(**first["config"])
    session = LabelingSession(first["dataset_id"], config, clock=clock)
    session.events.append(first)
    prelabeled = set(first["prelabeled"])
    for image_id in first["image_ids"]:
        item = WorkItem(image_id=image_id)
        if image_id in prelabeled:
            item.state = ItemState.ACCEPTED
        session.items[image_id] = item
    for event in it:
        session.events.append(event)
        kind = event["type"]
        if kind == "prompt_added":
            session.prompts[event["prompt_id"]] = PromptRecord(
                prompt_id=event["prompt_id"],
                image_id=event["image_id"],
                annotation=_mask_from_b64(event["annotation_png"]),
                kind=PromptKind(event["kind"]),
                class_id=event["class_id"],
                creator=event["creator"],
            )
        elif kind == "autolabel_committed":
            _apply_autolabel(session, event)
        elif kind == "review_submitted":
            _apply_review(session, event)
        else:
            raise ValueError(f"unknown event type {kind!r}")
    return session


def write_event_log(session: LabelingSession, path) -> None:
    from pathlib import Path

    with Path(path).open("w") as fh:
        for event in session.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")


def read_event_log(path) -> list:
    """Parse a JSONL event log, dropping a torn (unparseable) final line."""
    from pathlib import Path

    events = []
    lines = Path(path).read_text().splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            events.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break  # torn tail from a crash mid-write
            raise
    return events
