"""File-backed persistence under one data directory.

Layout:

    <data_dir>/
      blobs/<aa>/<sha256>         content-addressed payload bytes
      datasets/<id>/manifest.json + files (hard links into blobs/)
      sessions/<id>/events.jsonl  append-only event log
      sessions/<id>/meta.json     dataset binding
      sessions/<id>/snapshot.json periodic state snapshot (advisory)
      jobs/<id>.json              job descriptors
      models/active.ckpt          the currently loaded checkpoint

Dataset files land in the blob store first and are hard-linked into the
dataset tree (copied where the filesystem refuses links), so identical
uploads share bytes while every manifest still resolves to real paths.
Writes that must be atomic go through a temp file plus rename; event appends
are flushed and fsynced per commit so a crash can tear at most the final
line, which the log reader already tolerates.
"""
from __future__ import annotations

import hashlib
import json
import os
import uuid
import zipfile
from io import BytesIO
from pathlib import Path

from ..errors import InvalidManifest
from ..manifest import DatasetManifest, parse_manifest
from ..palette import ColorPalette, render_mask
from ..rasters import ImageBuffer
from ..workflow import LabelingSession, read_event_log, replay_events


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_suffix(path.suffix + f".tmp-{uuid.uuid4().hex[:8]}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


class DataStore:
    def __init__(self, root):
        self.root = Path(root)
        for sub in ("blobs", "datasets", "sessions", "jobs", "models"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    # -- blobs ---------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.root / "blobs" / digest[:2] / digest
        if not path.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(path, data)
        return digest

    def blob_path(self, digest: str) -> Path:
        return self.root / "blobs" / digest[:2] / digest

    def _materialize(self, digest: str, dest: Path):
        dest.parent.mkdir(parents=True, exist_ok=True)
        if dest.exists():
            dest.unlink()
        try:
            os.link(self.blob_path(digest), dest)
        except OSError:
            dest.write_bytes(self.blob_path(digest).read_bytes())

    # -- datasets --------------------------------------------------------------

    def put_dataset(self, manifest_doc: dict, files: dict, dataset_id: str | None = None) -> str:
        """Validate and store a dataset from an in-memory manifest + file map.

        `files` maps manifest-relative paths to bytes. A fresh unique id is
        minted unless the caller passes one explicitly (re-uploads of
        identical content intentionally get distinct ids, so the manifest's
        own embedded id is not reused for storage).
        """
        dataset_id = dataset_id or f"ds-{uuid.uuid4().hex[:12]}"
        manifest_doc = {**manifest_doc, "dataset_id": dataset_id}
        dest = self.root / "datasets" / dataset_id
        if dest.exists():
            raise InvalidManifest(f"dataset id {dataset_id} already exists")
        manifest = parse_manifest(manifest_doc, root=None, check_files=False)
        for entry in manifest.entries:
            for rel in filter(None, (entry.image_path, entry.mask_path)):
                if rel not in files:
                    raise InvalidManifest(f"manifest references missing file {rel}")
        dest.mkdir(parents=True)
        for rel, data in files.items():
            safe = (dest / rel).resolve()
            if not str(safe).startswith(str(dest.resolve())):
                raise InvalidManifest(f"path escapes dataset directory: {rel}")
            digest = self.put_blob(data)
            self._materialize(digest, dest / rel)
        _atomic_write(dest / "manifest.json",
                      (json.dumps(manifest_doc, indent=2) + "\n").encode())
        # full validation now that files are on disk
        from ..manifest import load_manifest

        load_manifest(dest / "manifest.json")
        return dataset_id

    def put_dataset_archive(self, archive: bytes, dataset_id: str | None = None) -> str:
        """Ingest a zip archive containing manifest.json plus its files."""
        try:
            zf = zipfile.ZipFile(BytesIO(archive))
        except zipfile.BadZipFile as e:
            raise InvalidManifest(f"not a zip archive: {e}") from e
        names = zf.namelist()
        if "manifest.json" not in names:
            raise InvalidManifest("archive is missing manifest.json")
        try:
            doc = json.loads(zf.read("manifest.json"))
        except json.JSONDecodeError as e:
            raise InvalidManifest(f"unparseable manifest.json: {e}") from e
        files = {n: zf.read(n) for n in names
                 if n != "manifest.json" and not n.endswith("/")}
        return self.put_dataset(doc, files, dataset_id=dataset_id)

    def load_dataset(self, dataset_id: str) -> DatasetManifest:
        from ..manifest import load_manifest

        path = self.root / "datasets" / dataset_id / "manifest.json"
        if not path.is_file():
            raise KeyError(dataset_id)
        return load_manifest(path)

    def list_datasets(self) -> list:
        return sorted(p.name for p in (self.root / "datasets").iterdir() if p.is_dir())

    # -- sessions ----------------------------------------------------------------

    def session_dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def create_session_dir(self, session_id: str, dataset_id: str):
        d = self.session_dir(session_id)
        d.mkdir(parents=True, exist_ok=False)
        _atomic_write(d / "meta.json",
                      json.dumps({"dataset_id": dataset_id}).encode())

    def append_events(self, session_id: str, events) -> None:
        path = self.session_dir(session_id) / "events.jsonl"
        with path.open("a") as fh:
            for event in events:
                fh.write(json.dumps(event, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def write_snapshot(self, session_id: str, session: LabelingSession) -> None:
        doc = {
            "state_hash": session.state_hash(),
            "counts": session.state_counts(),
            "events": len(session.events),
        }
        _atomic_write(self.session_dir(session_id) / "snapshot.json",
                      json.dumps(doc, indent=2).encode())

    def load_session(self, session_id: str):
        d = self.session_dir(session_id)
        meta_path = d / "meta.json"
        events_path = d / "events.jsonl"
        if not meta_path.is_file() or not events_path.is_file():
            raise KeyError(session_id)
        meta = json.loads(meta_path.read_text())
        session = replay_events(read_event_log(events_path))
        return session, meta["dataset_id"]

    def list_sessions(self) -> list:
        return sorted(p.name for p in (self.root / "sessions").iterdir() if p.is_dir())

    # -- jobs -----------------------------------------------------------------------

    def write_job(self, descriptor: dict) -> None:
        _atomic_write(self.root / "jobs" / f"{descriptor['job_id']}.json",
                      json.dumps(descriptor, indent=2).encode())

    def read_job(self, job_id: str) -> dict:
        path = self.root / "jobs" / f"{job_id}.json"
        if not path.is_file():
            raise KeyError(job_id)
        return json.loads(path.read_text())


def build_export_archive(session: LabelingSession, manifest: DatasetManifest,
                         palette: ColorPalette) -> bytes:
    """Deterministic zip of every accepted image/mask pair plus a manifest.

    Entries are ordered by image id and carry a fixed timestamp, so the
    archive bytes depend only on the labeled content.
    """
    from ..workflow import ItemState

    out = BytesIO()
    export_entries = []
    with zipfile.ZipFile(out, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def add(name: str, data: bytes):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)

        for image_id, item in sorted(session.items.items()):
            if item.state != ItemState.ACCEPTED:
                continue
            entry = manifest.entry(image_id)
            if item.candidate_mask is not None:
                mask_bytes = render_mask(item.candidate_mask, palette).png_bytes()
            elif entry.mask_path:  # pre-labeled at session creation
                mask_bytes = manifest.resolve(entry.mask_path).read_bytes()
            else:
                continue
            image_bytes = manifest.resolve(entry.image_path).read_bytes()
            add(f"images/{image_id}.png", image_bytes)
            add(f"masks/{image_id}.png", mask_bytes)
            export_entries.append({
                "image_id": image_id,
                "image_path": f"images/{image_id}.png",
                "mask_path": f"masks/{image_id}.png",
                "split": "train",
            })
        doc = {
            "version": 1,
            "dataset_id": f"{manifest.dataset_id}-labeled",
            "class_names": list(manifest.class_names),
            "palette": palette.to_jsonable(),
            "entries": export_entries,
        }
        add("manifest.json", (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())
    return out.getvalue()
