import itertools

import numpy as np
import pytest

from seglabel.datapipe import PromptKind
from seglabel.errors import EmptyDataset, InvalidTransition
from seglabel.manifest import DatasetManifest, ManifestEntry
from seglabel.rasters import ClassMask
from seglabel.rng import Rng
from seglabel.workflow import (ItemState, LabelingSession, PromptRecord,
                               SessionConfig, add_prompt, create_session,
                               mask_hash, read_event_log, replay_events,
                               run_autolabel, session_stats, submit_review,
                               write_event_log)

from conftest import blob_mask


class FakeClock:
    def __init__(self):
        self.t = 1000.0

    def __call__(self):
        self.t += 1.0
        return self.t


def make_manifest(n_unlabeled=5, n_labeled=0):
    entries = []
    for i in range(n_unlabeled):
        entries.append(ManifestEntry(image_id=f"u{i}", image_path=f"images/u{i}.png"))
    for i in range(n_labeled):
        entries.append(ManifestEntry(image_id=f"l{i}", image_path=f"images/l{i}.png",
                                     mask_path=f"masks/l{i}.png"))
    return DatasetManifest(
        dataset_id="ds", class_names=("background", "blob"), entries=tuple(entries)
    )


def make_prompt(pid="p0", image_id="u0"):
    ann = blob_mask(16, 16, 8, 8, 3)
    return PromptRecord(prompt_id=pid, image_id=image_id, annotation=ann,
                        kind=PromptKind.SCRIBBLE, class_id=1)


def fixed_labeler(prompt, image_id):
    return blob_mask(16, 16, 7, 7, 4)


def test_create_session_states():
    s = create_session(make_manifest(10, 0), clock=FakeClock())
    assert s.state_counts()[ItemState.UNLABELED.value] == 10
    s = create_session(make_manifest(4, 3), clock=FakeClock())
    counts = s.state_counts()
    assert counts[ItemState.UNLABELED.value] == 4
    assert counts[ItemState.ACCEPTED.value] == 3


def test_create_session_empty_manifest():
    with pytest.raises(EmptyDataset):
        create_session(DatasetManifest(dataset_id="x",
                                       class_names=("background",), entries=()))


def test_autolabel_moves_batch_to_pending():
    s = create_session(make_manifest(5), clock=FakeClock())
    prompt = make_prompt()
    s, skipped = run_autolabel(s, prompt, [f"u{i}" for i in range(5)], fixed_labeler)
    assert skipped == []
    counts = s.state_counts()
    assert counts[ItemState.PENDING_REVIEW.value] == 5
    for item in s.items.values():
        assert item.candidate_mask is not None
        assert prompt.prompt_id in item.attempted_prompt_ids


def test_autolabel_skips_attempted_prompt():
    s = create_session(make_manifest(2), clock=FakeClock())
    prompt = make_prompt()
    spare = make_prompt("p1", "u1")
    add_prompt(s, prompt)
    add_prompt(s, spare)  # a second prompt keeps reject from exhausting
    s, _ = run_autolabel(s, prompt, ["u0"], fixed_labeler)
    submit_review(s, "u0", "reject")
    assert s.items["u0"].state == ItemState.REJECTED
    # same prompt again: skipped with a report, not an exception
    s, skipped = run_autolabel(s, prompt, ["u0"], fixed_labeler)
    assert skipped == [{"image_id": "u0", "reason": "prompt_exhausted"}]
    assert s.items["u0"].state == ItemState.REJECTED
    # a NEW prompt is allowed on the rejected item
    s, skipped = run_autolabel(s, spare, ["u0"], fixed_labeler)
    assert skipped == []
    assert s.items["u0"].state == ItemState.PENDING_REVIEW


def test_autolabel_skips_wrong_state():
    s = create_session(make_manifest(2), clock=FakeClock())
    s, _ = run_autolabel(s, make_prompt(), ["u0"], fixed_labeler)
    s, skipped = run_autolabel(s, make_prompt("p1"), ["u0"], fixed_labeler)
    assert skipped == [{"image_id": "u0", "reason": "invalid_state"}]


def test_review_approve_freezes_mask():
    s = create_session(make_manifest(2), clock=FakeClock())
    s, _ = run_autolabel(s, make_prompt(), ["u0"], fixed_labeler)
    item = submit_review(s, "u0", "approve", reviewer="alice")
    assert item.state == ItemState.ACCEPTED
    assert item.accepted_hash == mask_hash(item.candidate_mask)
    assert s.verify_accepted("u0")


def test_review_reject_paths():
    cfg = SessionConfig(max_prompt_attempts=2)
    s = create_session(make_manifest(2), cfg, clock=FakeClock())
    s, _ = run_autolabel(s, make_prompt("p0"), ["u0"], fixed_labeler)
    item = submit_review(s, "u0", "reject")
    # one prompt known, one attempted -> exhausted -> manual
    assert item.state == ItemState.MANUAL_REQUIRED
    # fresh item with two prompts available: first reject keeps it recyclable
    s2 = create_session(make_manifest(2), cfg, clock=FakeClock())
    add_prompt(s2, make_prompt("p0"))
    add_prompt(s2, make_prompt("p1", "u1"))
    s2, _ = run_autolabel(s2, s2.prompts["p0"], ["u0"], fixed_labeler)
    item = submit_review(s2, "u0", "reject")
    assert item.state == ItemState.REJECTED
    assert item.candidate_mask is None


def test_review_invalid_state():
    s = create_session(make_manifest(2), clock=FakeClock())
    with pytest.raises(InvalidTransition):
        submit_review(s, "u0", "approve")


def test_review_idempotency_key():
    s = create_session(make_manifest(2), clock=FakeClock())
    s, _ = run_autolabel(s, make_prompt(), ["u0", "u1"], fixed_labeler)
    submit_review(s, "u0", "approve", idempotency_key="k1")
    events_before = len(s.events)
    # repeated submission with the same key is a no-op
    item = submit_review(s, "u0", "approve", idempotency_key="k1")
    assert item.state == ItemState.ACCEPTED
    assert len(s.events) == events_before


def test_attempted_prompts_never_shrink():
    s = create_session(make_manifest(1), SessionConfig(max_prompt_attempts=10),
                       clock=FakeClock())
    prompts = [make_prompt(f"p{i}") for i in range(4)]
    for p in prompts:
        add_prompt(s, p)
    seen = set()
    for i, prompt in enumerate(prompts):
        s, _ = run_autolabel(s, prompt, ["u0"], fixed_labeler)
        seen.add(prompt.prompt_id)
        assert s.items["u0"].attempted_prompt_ids == seen
        submit_review(s, "u0", "reject")
    assert s.items["u0"].state == ItemState.MANUAL_REQUIRED


def test_session_stats_counts_and_rate():
    s = create_session(make_manifest(10), clock=FakeClock())
    stats = session_stats(s)
    assert stats["counts"][ItemState.UNLABELED.value] == 10
    assert stats["acceptance_rate"] == 0.0
    s, _ = run_autolabel(s, make_prompt(), [f"u{i}" for i in range(10)], fixed_labeler)
    for i in range(6):
        submit_review(s, f"u{i}", "approve")
    for i in range(6, 10):
        submit_review(s, f"u{i}", "reject")
    stats = session_stats(s)
    assert stats["acceptance_rate"] == pytest.approx(0.6)
    # stats are a pure read
    assert session_stats(s) == stats


def test_session_stats_quality_with_truth():
    s = create_session(make_manifest(3), clock=FakeClock())
    s, _ = run_autolabel(s, make_prompt(), ["u0", "u1"], fixed_labeler)
    submit_review(s, "u0", "approve")
    truth = {"u0": fixed_labeler(None, "u0")}
    stats = session_stats(s, truths=truth)
    assert stats["quality"]["mean_iou"] == 1.0


def test_event_log_replay_reproduces_state(tmp_path):
    clock = FakeClock()
    s = create_session(make_manifest(6), clock=clock)
    rng = Rng(3)
    prompts = [make_prompt(f"p{i}", f"u{i}") for i in range(3)]
    for p in prompts:
        add_prompt(s, p)
    for step in range(10):
        eligible = [iid for iid, it in s.items.items()
                    if it.state in (ItemState.UNLABELED, ItemState.REJECTED)]
        if not eligible:
            break
        p = prompts[step % 3]
        batch = [i for i in eligible if p.prompt_id not in s.items[i].attempted_prompt_ids]
        if not batch:
            continue
        s, _ = run_autolabel(s, p, batch, fixed_labeler)
        for iid in batch:
            submit_review(s, iid, "approve" if rng.random() < 0.5 else "reject")
    path = tmp_path / "events.jsonl"
    write_event_log(s, path)
    replayed = replay_events(read_event_log(path))
    assert replayed.state_hash() == s.state_hash()
    assert replayed.state_counts() == s.state_counts()


def test_event_log_tolerates_torn_tail(tmp_path):
    clock = FakeClock()
    s = create_session(make_manifest(2), clock=clock)
    s, _ = run_autolabel(s, make_prompt(), ["u0"], fixed_labeler)
    path = tmp_path / "events.jsonl"
    write_event_log(s, path)
    with path.open("a") as fh:
        fh.write('{"type": "review_submitted", "image_id"')  # crash mid-write
    events = read_event_log(path)
    assert len(events) == len(s.events)
    assert replay_events(events).state_hash() == s.state_hash()


def test_liveness_simulation():
    """Stochastic mock model + reviewer: every item terminates."""
    rng = Rng(99)
    manifest = make_manifest(100)
    cfg = SessionConfig(max_prompt_attempts=5)
    s = create_session(manifest, cfg, clock=FakeClock())
    prompts = [make_prompt(f"p{i}", f"u{i}") for i in range(5)]
    for p in prompts:
        add_prompt(s, p)

    def mock_labeler(prompt, image_id):
        return blob_mask(16, 16, int(rng.integers(4, 12)), 8, 3)

    for round_no in range(200):
        eligible = [iid for iid, it in sorted(s.items.items())
                    if it.state in (ItemState.UNLABELED, ItemState.REJECTED)]
        if not eligible:
            break
        progressed = False
        for p in prompts:
            batch = [i for i in eligible
                     if p.prompt_id not in s.items[i].attempted_prompt_ids]
            if not batch:
                continue
            s, _ = run_autolabel(s, p, batch[:20], mock_labeler)
            for iid in batch[:20]:
                verdict = "approve" if rng.random() < 0.6 else "reject"
                submit_review(s, iid, verdict)
            progressed = True
            break
        assert progressed, "no progress while eligible items remain"
    counts = s.state_counts()
    assert counts[ItemState.UNLABELED.value] == 0
    assert counts[ItemState.REJECTED.value] == 0
    assert counts[ItemState.PENDING_REVIEW.value] == 0
    assert counts[ItemState.ACCEPTED.value] + counts[ItemState.MANUAL_REQUIRED.value] == 100
    # no prompt reused per item, ever (history audit)
    for item in s.items.values():
        autolabels = [h for h in item.history if h[0] == "autolabel"]
        used = [h[2] for h in autolabels]
        assert len(used) == len(set(used))
    # replay reproduces the final state
    assert replay_events(s.events).state_hash() == s.state_hash()
