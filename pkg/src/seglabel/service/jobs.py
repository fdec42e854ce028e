"""A single-worker FIFO job runner with file-backed descriptors.

One background thread executes jobs in submission order: inference jobs share
the model read-only, and training would need it exclusively, so strict FIFO
over a single worker is both the simplest and the correct concurrency story
at this scale. Every state change is persisted atomically; terminal states
never mutate again and progress only moves forward.
"""
from __future__ import annotations

import queue
import threading
import traceback
import uuid
from dataclasses import dataclass, field

TERMINAL = ("done", "failed")


class JobRunner:
    def __init__(self, store):
        self.store = store
        self._queue: queue.Queue = queue.Queue()
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()
        self._worker = threading.Thread(target=self._run, daemon=True)
        self._worker.start()

    def submit(self, kind: str, params: dict, fn) -> dict:
        """Queue `fn(progress_cb) -> result dict`; returns the descriptor."""
        descriptor = {
            "job_id": f"job-{uuid.uuid4().hex[:12]}",
            "kind": kind,
            "params": params,
            "state": "queued",
            "progress": 0.0,
            "result": None,
            "error": None,
        }
        with self._lock:
            self._jobs[descriptor["job_id"]] = descriptor
            self.store.write_job(descriptor)
        self._queue.put((descriptor["job_id"], fn))
        return dict(descriptor)

    def get(self, job_id: str) -> dict:
        with self._lock:
            if job_id in self._jobs:
                return dict(self._jobs[job_id])
        return self.store.read_job(job_id)  # raises KeyError when unknown

    def _update(self, job_id: str, **changes):
        with self._lock:
            job = self._jobs[job_id]
            if job["state"] in TERMINAL:
                return
            if "progress" in changes:
                changes["progress"] = max(job["progress"],
                                          min(1.0, float(changes["progress"])))
            job.update(changes)
            self.store.write_job(job)

    def _run(self):
        while True:
            job_id, fn = self._queue.get()
            self._update(job_id, state="running")

            def progress(value: float, job_id=job_id):
                self._update(job_id, progress=value)

            try:
                result = fn(progress)
                self._update(job_id, state="done", progress=1.0, result=result)
            except Exception as e:  # noqa: BLE001 - job boundary
                self._update(job_id, state="failed",
                             error=f"{type(e).__name__}: {e}")
                traceback.print_exc()
            finally:
                self._queue.task_done()

    def wait_idle(self, timeout: float | None = None):
        """Block until the queue drains (used by tests and shutdown)."""
        import time

        deadline = None if timeout is None else time.time() + timeout
        while not self._queue.empty():
            if deadline and time.time() > deadline:
                raise TimeoutError("job queue did not drain")
            time.sleep(0.01)
        self._queue.join()
