"""The HTTP API the annotation frontend drives.

Every non-2xx response body is a single ApiError object:
    {"error": {"code": "...", "message": "...", "field": "..."?}}

Endpoints (JSON unless noted):
    GET  /healthz
    POST /datasets                multipart: archive=<zip> | manifest=<json> + files
    GET  /datasets/{id}           manifest summary
    GET  /datasets/{id}/images/{image_id}   PNG bytes
    POST /sessions                {"dataset_id": ...}
    GET  /sessions/{id}           session stats
    GET  /sessions/{id}/items     ?state=&page=&page_size=
    GET  /sessions/{id}/items/{image_id}    item detail + overlay PNG (base64)
    POST /sessions/{id}/prompts   {"image_id", "class_id", "strokes" | "mask_png"}
    POST /sessions/{id}/jobs      {"kind": "autolabel", "prompt_id", "item_ids"}
    GET  /jobs/{id}
    POST /sessions/{id}/reviews   {"item_id", "verdict"} (+ Idempotency-Key header)
    GET  /sessions/{id}/export    zip of accepted pairs
    POST /model                   {"checkpoint_path": ...}
    GET  /model

A single optional bearer token (config/env) gates every route except
/healthz; TLS and anything fancier is left to a reverse proxy.
"""
from __future__ import annotations

import base64
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..datapipe import PromptKind, rasterize_polyline
from ..errors import (EmptySet, InvalidManifest, InvalidTransition,
                      SegLabelError)
from ..manifest import DatasetManifest
from ..model import Model, infer, load_checkpoint_file
from ..palette import ColorPalette, render_mask
from ..rasters import ClassMask, ImageBuffer
from ..synth import storage_palette
from ..workflow import (ItemState, LabelingSession, PromptRecord,
                        SessionConfig, create_session, run_autolabel,
                        session_stats, submit_review)
from .jobs import JobRunner
from .storage import DataStore, build_export_archive


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field

    def response(self) -> JSONResponse:
        body = {"code": self.code, "message": self.message}
        if self.field:
            body["field"] = self.field
        return JSONResponse(status_code=self.status, content={"error": body})


class ServiceState:
    """Everything the route handlers share."""

    def __init__(self, data_dir, model_path=None, seed: int = 0,
                 token: str | None = None, max_upload_bytes: int = 256 * 2 ** 20):
        self.store = DataStore(data_dir)
        self.jobs = JobRunner(self.store)
        self.token = token
        self.max_upload_bytes = max_upload_bytes
        self.seed = seed
        self.model: Model | None = None
        self.model_path: str | None = None
        self.sessions: dict[str, dict] = {}  # id -> {session, dataset_id, lock, flushed}
        self._registry_lock = threading.Lock()
        if model_path:
            self.load_model(model_path)
        for session_id in self.store.list_sessions():
            try:
                session, dataset_id = self.store.load_session(session_id)
            except KeyError:
                continue
            self.sessions[session_id] = {
                "session": session, "dataset_id": dataset_id,
                "lock": threading.Lock(), "flushed": len(session.events),
            }

    def load_model(self, path):
        path = Path(path)
        if not path.is_file():
            raise ApiError(404, "ModelNotFound", f"no checkpoint at {path}")
        self.model = load_checkpoint_file(path)
        self.model_path = str(path)

    def session_entry(self, session_id: str) -> dict:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise ApiError(404, "UnknownSession", f"no session {session_id}") from None

    def flush_session(self, session_id: str):
        entry = self.sessions[session_id]
        session: LabelingSession = entry["session"]
        new_events = session.events[entry["flushed"]:]
        if new_events:
            self.store.append_events(session_id, new_events)
            entry["flushed"] = len(session.events)
            if entry["flushed"] % 50 < len(new_events):
                self.store.write_snapshot(session_id, session)

    def dataset_palette(self, manifest: DatasetManifest) -> ColorPalette:
        return manifest.palette or storage_palette(max(1, manifest.num_classes - 1))

    def make_labeler(self, manifest: DatasetManifest, palette: ColorPalette):
        model = self.model
        side = model.cfg.canvas_side

        def load_image(image_id: str) -> ImageBuffer:
            entry = manifest.entry(image_id)
            return ImageBuffer.open_png(manifest.resolve(entry.image_path))

        def labeler(prompt: PromptRecord, image_id: str) -> ClassMask:
            ref_image = load_image(prompt.image_id)
            annotation = prompt.annotation
            if (ref_image.height, ref_image.width) != (side, side):
                ref_image = ref_image.resized(side, side)
                annotation = annotation.resized_nearest(side, side)
            query = load_image(image_id)
            native = (query.height, query.width)
            if native != (side, side):
                query = query.resized(side, side)
            mask = infer(model, (ref_image, render_mask(annotation, palette)),
                         query, prompt.kind, palette)
            if native != (side, side):
                mask = mask.resized_nearest(*native)
            return mask

        return labeler


def create_app(data_dir, model_path=None, seed: int = 0, token: str | None = None,
               max_upload_bytes: int = 256 * 2 ** 20,
               static_dir=None) -> FastAPI:
    state = ServiceState(data_dir, model_path=model_path, seed=seed, token=token,
                         max_upload_bytes=max_upload_bytes)
    app = FastAPI(title="seglabel", version="0.1.0")
    app.state.service = state

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return exc.response()

    @app.exception_handler(SegLabelError)
    async def handle_domain_error(request: Request, exc: SegLabelError):
        mapping = {
            InvalidManifest: (400, "InvalidManifest"),
            InvalidTransition: (409, "InvalidTransition"),
            EmptySet: (400, "EmptyAnnotation"),
        }
        status, code = mapping.get(type(exc), (400, type(exc).__name__))
        return ApiError(status, code, str(exc)).response()

    @app.middleware("http")
    async def auth_middleware(request: Request, call_next):
        if state.token and request.url.path != "/healthz":
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {state.token}":
                return ApiError(401, "Unauthorized", "missing or bad token").response()
        return await call_next(request)

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": state.model is not None}

    # -- datasets -------------------------------------------------------------

    @app.post("/datasets", status_code=201)
    async def post_dataset(request: Request):
        form = await request.form()
        total = 0
        archive = form.get("archive")
        if archive is not None and hasattr(archive, "read"):
            data = await archive.read()
            total += len(data)
            if total > state.max_upload_bytes:
                raise ApiError(413, "TooLarge", "upload exceeds the configured cap")
            dataset_id = state.store.put_dataset_archive(
                data, dataset_id=form.get("dataset_id") or None)
            return {"dataset_id": dataset_id}
        manifest_field = form.get("manifest")
        if manifest_field is None:
            raise ApiError(400, "InvalidManifest",
                           "provide an archive or a manifest plus files",
                           field="archive")
        if hasattr(manifest_field, "read"):
            manifest_raw = await manifest_field.read()
        else:
            manifest_raw = str(manifest_field).encode()
        try:
            doc = json.loads(manifest_raw)
        except json.JSONDecodeError as e:
            raise ApiError(400, "InvalidManifest", f"manifest is not JSON: {e}",
                           field="manifest") from e
        files = {}
        for key, value in form.multi_items():
            if key == "files" and hasattr(value, "read"):
                data = await value.read()
                total += len(data)
                if total > state.max_upload_bytes:
                    raise ApiError(413, "TooLarge", "upload exceeds the configured cap")
                files[value.filename] = data
        dataset_id = state.store.put_dataset(doc, files,
                                             dataset_id=form.get("dataset_id") or None)
        return {"dataset_id": dataset_id}

    def _manifest(dataset_id: str) -> DatasetManifest:
        try:
            return state.store.load_dataset(dataset_id)
        except KeyError:
            raise ApiError(404, "UnknownDataset", f"no dataset {dataset_id}") from None

    @app.get("/datasets/{dataset_id}")
    def get_dataset(dataset_id: str):
        manifest = _manifest(dataset_id)
        return {
            "dataset_id": manifest.dataset_id,
            "class_names": list(manifest.class_names),
            "images": [
                {"image_id": e.image_id, "labeled": e.mask_path is not None,
                 "split": e.split}
                for e in manifest.entries
            ],
        }

    @app.get("/datasets/{dataset_id}/images/{image_id}")
    def get_image(dataset_id: str, image_id: str):
        manifest = _manifest(dataset_id)
        try:
            entry = manifest.entry(image_id)
        except KeyError:
            raise ApiError(404, "UnknownImage", f"no image {image_id}") from None
        return Response(content=manifest.resolve(entry.image_path).read_bytes(),
                        media_type="image/png")

    # -- sessions ----------------------------------------------------------------

    @app.post("/sessions", status_code=201)
    async def post_session(body: dict):
        dataset_id = body.get("dataset_id")
        if not dataset_id:
            raise ApiError(400, "MissingField", "dataset_id is required",
                           field="dataset_id")
        manifest = _manifest(dataset_id)
        config = SessionConfig(
            batch_size=int(body.get("batch_size", 8)),
            max_prompt_attempts=int(body.get("max_prompt_attempts", 5)),
        )
        session = create_session(manifest, config)
        session_id = body.get("session_id") or f"sess-{uuid.uuid4().hex[:12]}"
        with state._registry_lock:
            if session_id in state.sessions:
                raise ApiError(409, "SessionExists", f"{session_id} already exists")
            state.store.create_session_dir(session_id, dataset_id)
            state.sessions[session_id] = {
                "session": session, "dataset_id": dataset_id,
                "lock": threading.Lock(), "flushed": 0,
            }
            state.flush_session(session_id)
        return {"session_id": session_id}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        entry = state.session_entry(session_id)
        manifest = _manifest(entry["dataset_id"])
        truths = None
        if any(e.mask_path for e in manifest.entries):
            from ..datapipe import load_labeled_pair

            truths = {}
            for e in manifest.entries:
                if e.mask_path:
                    _, mask = load_labeled_pair(manifest, e)
                    truths[e.image_id] = mask
        stats = session_stats(entry["session"], truths=truths)
        stats["session_id"] = session_id
        stats["dataset_id"] = entry["dataset_id"]
        return stats

    @app.get("/sessions/{session_id}/items")
    def get_items(session_id: str, item_state: str | None = None, page: int = 1,
                  page_size: int = 50, state_filter: str | None = None):
        entry = state.session_entry(session_id)
        wanted = item_state or state_filter
        if wanted is not None:
            try:
                wanted = ItemState(wanted)
            except ValueError:
                raise ApiError(400, "BadStateFilter",
                               f"unknown state {wanted!r}", field="state") from None
        items = [
            it for _, it in sorted(entry["session"].items.items())
            if wanted is None or it.state == wanted
        ]
        start = (page - 1) * page_size
        page_items = items[start:start + page_size]
        return {
            "total": len(items),
            "page": page,
            "page_size": page_size,
            "items": [
                {
                    "image_id": it.image_id,
                    "state": it.state.value,
                    "attempted_prompt_ids": sorted(it.attempted_prompt_ids),
                    "has_candidate": it.candidate_mask is not None,
                }
                for it in page_items
            ],
        }

    @app.get("/sessions/{session_id}/items/{image_id}")
    def get_item(session_id: str, image_id: str):
        entry = state.session_entry(session_id)
        session: LabelingSession = entry["session"]
        if image_id not in session.items:
            raise ApiError(404, "UnknownItem", f"no item {image_id}")
        item = session.items[image_id]
        manifest = _manifest(entry["dataset_id"])
        palette = state.dataset_palette(manifest)
        body = {
            "image_id": image_id,
            "state": item.state.value,
            "attempted_prompt_ids": sorted(item.attempted_prompt_ids),
            "history": [list(h) for h in item.history],
        }
        if item.candidate_mask is not None:
            overlay = render_mask(item.candidate_mask, palette)
            body["candidate_overlay_png"] = base64.b64encode(overlay.png_bytes()).decode()
            body["palette"] = palette.to_jsonable()
        return body

    # -- prompts --------------------------------------------------------------------

    @app.post("/sessions/{session_id}/prompts", status_code=201)
    def post_prompt(session_id: str, body: dict):
        entry = state.session_entry(session_id)
        session: LabelingSession = entry["session"]
        manifest = _manifest(entry["dataset_id"])
        image_id = body.get("image_id")
        if image_id not in session.items:
            raise ApiError(404, "UnknownImage", f"no image {image_id} in session")
        class_id = int(body.get("class_id", 1))
        if not 1 <= class_id < manifest.num_classes:
            raise ApiError(400, "BadClassId", f"class_id {class_id} out of range",
                           field="class_id")
        m_entry = manifest.entry(image_id)
        height, width = _png_size(manifest.resolve(m_entry.image_path))
        strokes = body.get("strokes")
        mask_png = body.get("mask_png")
        if strokes:
            pixels = set()
            for stroke in strokes:
                points = [(int(p[1]), int(p[0])) for p in stroke["points"]]  # x,y -> r,c
                if any(not (0 <= r < height and 0 <= c < width) for r, c in points):
                    raise ApiError(400, "OutOfBounds",
                                   "stroke points must lie inside the image",
                                   field="strokes")
                raster = rasterize_polyline(points, int(stroke.get("radius", 1)),
                                            height, width)
                pixels.update(map(tuple, raster))
            if not pixels:
                raise ApiError(400, "EmptyAnnotation", "strokes rasterized to nothing",
                               field="strokes")
            ids = np.zeros((height, width), dtype=np.uint8)
            for r, c in pixels:
                ids[r, c] = class_id
            annotation = ClassMask(ids)
            kind = PromptKind.SCRIBBLE
        elif mask_png:
            from ..palette import decode_mask

            rendered = ImageBuffer.from_png_bytes(base64.b64decode(mask_png))
            if (rendered.height, rendered.width) != (height, width):
                raise ApiError(400, "BadMask", "mask must match the image size",
                               field="mask_png")
            palette = state.dataset_palette(manifest)
            decoded = decode_mask(rendered, palette)
            ids = np.where(decoded.ids == class_id, class_id, 0).astype(np.uint8)
            if not ids.any():
                raise ApiError(400, "EmptyAnnotation",
                               f"mask has no pixels of class {class_id}",
                               field="mask_png")
            annotation = ClassMask(ids)
            kind = PromptKind.FULL_MASK
        else:
            raise ApiError(400, "EmptyAnnotation",
                           "provide strokes or mask_png", field="strokes")
        prompt = PromptRecord(
            prompt_id=f"prompt-{uuid.uuid4().hex[:12]}",
            image_id=image_id,
            annotation=annotation,
            kind=kind,
            class_id=class_id,
            creator=body.get("creator", "annotator"),
        )
        with entry["lock"]:
            from ..workflow import add_prompt

            add_prompt(session, prompt)
            state.flush_session(session_id)
        body = {
            "prompt_id": prompt.prompt_id,
            "kind": kind.value,
            "pixel_count": int(annotation.foreground_count()),
        }
        if kind == PromptKind.SCRIBBLE and annotation.foreground_count() <= 5000:
            rows, cols = np.nonzero(annotation.ids)
            body["pixels"] = [[int(r), int(c)] for r, c in zip(rows, cols)]
        return body

    # -- jobs -------------------------------------------------------------------------

    @app.post("/sessions/{session_id}/jobs", status_code=202)
    def post_job(session_id: str, body: dict):
        entry = state.session_entry(session_id)
        session: LabelingSession = entry["session"]
        kind = body.get("kind")
        if kind != "autolabel":
            raise ApiError(400, "BadJobKind", f"unsupported job kind {kind!r}",
                           field="kind")
        if state.model is None:
            raise ApiError(409, "NoModelLoaded",
                           "load a checkpoint via POST /model first")
        prompt_id = body.get("prompt_id")
        if prompt_id not in session.prompts:
            raise ApiError(404, "UnknownPrompt", f"no prompt {prompt_id}")
        item_ids = list(body.get("item_ids") or [])
        if not item_ids:
            raise ApiError(400, "MissingField", "item_ids is required",
                           field="item_ids")
        unknown = [i for i in item_ids if i not in session.items]
        if unknown:
            raise ApiError(404, "UnknownItem", f"unknown items: {unknown}")
        manifest = _manifest(entry["dataset_id"])
        palette = state.dataset_palette(manifest)
        labeler = state.make_labeler(manifest, palette)
        prompt = session.prompts[prompt_id]

        def execute(progress):
            done = 0
            masks: dict[str, ClassMask] = {}

            def counting_labeler(p, image_id):
                nonlocal done
                mask = labeler(p, image_id)
                done += 1
                progress(done / max(1, len(item_ids)))
                masks[image_id] = mask
                return mask

            with entry["lock"]:
                _, skipped = run_autolabel(session, prompt, item_ids, counting_labeler)
                state.flush_session(session_id)
            return {
                "labeled": sorted(masks),
                "skipped": skipped,
                "pending_review": session.state_counts()[ItemState.PENDING_REVIEW.value],
            }

        descriptor = state.jobs.submit("autolabel", {
            "session_id": session_id, "prompt_id": prompt_id,
            "item_ids": item_ids,
        }, execute)
        return descriptor

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        try:
            return state.jobs.get(job_id)
        except KeyError:
            raise ApiError(404, "UnknownJob", f"no job {job_id}") from None

    # -- reviews ---------------------------------------------------------------------

    @app.post("/sessions/{session_id}/reviews")
    def post_review(session_id: str, body: dict, request: Request):
        entry = state.session_entry(session_id)
        session: LabelingSession = entry["session"]
        item_id = body.get("item_id")
        verdict = body.get("verdict")
        if verdict not in ("approve", "reject"):
            raise ApiError(400, "BadVerdict", "verdict must be approve or reject",
                           field="verdict")
        if item_id not in session.items:
            raise ApiError(404, "UnknownItem", f"no item {item_id}")
        key = request.headers.get("idempotency-key") or body.get("idempotency_key")
        with entry["lock"]:
            item = submit_review(session, item_id, verdict,
                                 reviewer=body.get("reviewer", "reviewer"),
                                 idempotency_key=key)
            state.flush_session(session_id)
        return {
            "image_id": item.image_id,
            "state": item.state.value,
            "attempted_prompt_ids": sorted(item.attempted_prompt_ids),
        }

    # -- export -----------------------------------------------------------------------

    @app.get("/sessions/{session_id}/export")
    def get_export(session_id: str):
        entry = state.session_entry(session_id)
        manifest = _manifest(entry["dataset_id"])
        palette = state.dataset_palette(manifest)
        with entry["lock"]:
            archive = build_export_archive(entry["session"], manifest, palette)
        return Response(
            content=archive, media_type="application/zip",
            headers={"Content-Disposition":
                     f'attachment; filename="{session_id}-accepted.zip"'},
        )

    # -- model admin ---------------------------------------------------------------------

    @app.post("/model")
    def post_model(body: dict):
        path = body.get("checkpoint_path")
        if not path:
            raise ApiError(400, "MissingField", "checkpoint_path is required",
                           field="checkpoint_path")
        state.load_model(path)
        return {"loaded": True, "checkpoint_path": state.model_path,
                "config": state.model.cfg.to_jsonable()}

    @app.get("/model")
    def get_model():
        if state.model is None:
            return {"loaded": False}
        return {"loaded": True, "checkpoint_path": state.model_path,
                "config": state.model.cfg.to_jsonable(),
                "parameters": state.model.param_count()}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def _png_size(path) -> tuple:
    """(height, width) straight from the PNG header, no pixel decode."""
    from PIL import Image

    with Image.open(path) as im:
        return im.height, im.width
