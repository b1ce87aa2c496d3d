"""HTTP facade: synchronous layout preview plus queued generate/inpaint jobs.

Request handling is concurrent but model execution is serialized through one
worker thread pulling jobs in FIFO order. Jobs and results persist in a SQLite
file, so a restarted server re-enqueues whatever was still pending.

Images travel as base-64 PNG. Region masks are 8-bit grayscale; any non-zero
pixel is in-region. ``mask_checksum`` (sha256 over ``{h}x{w}:`` + raw pixel
bytes) lets clients verify a painted mask survived the trip bit-for-bit.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import queue
import sqlite3
import threading
import time
import uuid
from contextlib import asynccontextmanager, closing
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from PIL import Image
from pydantic import BaseModel

from .diffusion import SamplerConfig
from .errors import (
    DataError,
    MalformedPromptError,
    TextForgeError,
    TooManyKeywordsError,
)
from .geometry import BoundingBoxSet
from .glyphs import CharSegMask
from .pipeline import TwoStagePipeline
from .prompts import extract_keywords

TERMINAL = ("done", "failed")


# -- Encoding helpers -----------------------------------------------------------


def png_bytes(arr: np.ndarray) -> bytes:
    """Encode (H, W) uint8 as grayscale PNG or (H, W, 3) uint8 as RGB PNG."""
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr.astype(np.uint8), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def png_b64_encode(arr: np.ndarray) -> str:
    return base64.b64encode(png_bytes(arr)).decode("ascii")


def png_b64_decode(data: str) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(base64.b64decode(data)))
        img.load()
    except Exception as exc:
        raise HTTPException(
            400, detail={"code": "bad_image_encoding", "message": str(exc)}
        ) from exc
    if img.mode in ("L", "P", "1"):
        return np.asarray(img.convert("L"))
    return np.asarray(img.convert("RGB"))


def mask_checksum(arr: np.ndarray) -> str:
    """sha256 over the shape header plus raw pixel bytes; clients can compute
    the same digest over their own buffer to verify a lossless round trip."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    header = ("x".join(str(d) for d in arr.shape) + ":").encode("ascii")
    return hashlib.sha256(header + arr.tobytes()).hexdigest()


# -- Job store ------------------------------------------------------------------


@dataclass
class Job:
    id: str
    kind: str  # layout|generate|inpaint|remove
    payload: dict
    status: str  # queued|running|done|failed
    error: str | None
    result_png: bytes | None
    enqueued_at: float
    started_at: float | None
    finished_at: float | None

    def public(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "error": self.error,
            "enqueued_at": self.enqueued_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


_SCHEMA = """
CREATE TABLE IF NOT EXISTS jobs (
    rowid INTEGER PRIMARY KEY AUTOINCREMENT,
    id TEXT UNIQUE NOT NULL,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    status TEXT NOT NULL,
    error TEXT,
    result_png BLOB,
    enqueued_at REAL NOT NULL,
    started_at REAL,
    finished_at REAL
)
"""


class JobStore:
    """SQLite-backed job table; every write is one atomic transaction."""

    def __init__(self, path: str | Path):
        self.path = str(path)
        with closing(self._connect()) as con, con:
            con.execute("PRAGMA journal_mode=WAL")
            con.execute(_SCHEMA)

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.path, timeout=30.0)

    def create(self, kind: str, payload: dict) -> Job:
        job = Job(
            id=uuid.uuid4().hex,
            kind=kind,
            payload=payload,
            status="queued",
            error=None,
            result_png=None,
            enqueued_at=time.time(),
            started_at=None,
            finished_at=None,
        )
        with closing(self._connect()) as con, con:
            con.execute(
                "INSERT INTO jobs (id, kind, payload, status, enqueued_at)"
                " VALUES (?, ?, ?, ?, ?)",
                (job.id, job.kind, json.dumps(job.payload), job.status, job.enqueued_at),
            )
        return job

    def get(self, job_id: str) -> Job | None:
        with closing(self._connect()) as con:
            row = con.execute(
                "SELECT id, kind, payload, status, error, result_png,"
                " enqueued_at, started_at, finished_at FROM jobs WHERE id = ?",
                (job_id,),
            ).fetchone()
        if row is None:
            return None
        return Job(
            id=row[0],
            kind=row[1],
            payload=json.loads(row[2]),
            status=row[3],
            error=row[4],
            result_png=row[5],
            enqueued_at=row[6],
            started_at=row[7],
            finished_at=row[8],
        )

    def _transition(self, job_id: str, from_status: tuple[str, ...], **updates) -> None:
        """Forward-only status change; no-op rows raise so bugs surface."""
        sets = ", ".join(f"{k} = ?" for k in updates)
        marks = ",".join("?" for _ in from_status)
        with closing(self._connect()) as con, con:
            cur = con.execute(
                f"UPDATE jobs SET {sets} WHERE id = ? AND status IN ({marks})",
                (*updates.values(), job_id, *from_status),
            )
            if cur.rowcount != 1:
                raise DataError(f"job {job_id}: illegal status transition to {updates}")

    def set_running(self, job_id: str) -> None:
        self._transition(job_id, ("queued",), status="running", started_at=time.time())

    def set_done(self, job_id: str, result_png: bytes) -> None:
        self._transition(
            job_id, ("running",), status="done", result_png=result_png,
            finished_at=time.time(),
        )

    def set_failed(self, job_id: str, error: str) -> None:
        self._transition(
            job_id, ("queued", "running"), status="failed", error=error,
            finished_at=time.time(),
        )

    def pending_ids(self) -> list[str]:
        """Queued job ids in arrival order."""
        with closing(self._connect()) as con:
            rows = con.execute(
                "SELECT id FROM jobs WHERE status = 'queued' ORDER BY rowid"
            ).fetchall()
        return [r[0] for r in rows]

    def requeue_running(self) -> None:
        """Crash recovery: anything mid-flight goes back to the queue."""
        with closing(self._connect()) as con, con:
            con.execute(
                "UPDATE jobs SET status = 'queued', started_at = NULL"
                " WHERE status = 'running'"
            )


# -- Request models ---------------------------------------------------------------


class LayoutRequest(BaseModel):
    prompt: str = ""
    boxes: list[list[float]] | None = None
    keywords: list[str] | None = None


class GenerateRequest(BaseModel):
    prompt: str
    boxes: list[list[float]] | None = None
    keywords: list[str] | None = None
    mask_png_b64: str | None = None
    seed: int | None = None
    steps: int | None = None
    guidance_scale: float | None = None


class InpaintRequest(BaseModel):
    image_png_b64: str
    region_png_b64: str
    text: str | None = None
    boxes: list[list[float]] | None = None
    seed: int | None = None
    steps: int | None = None
    guidance_scale: float | None = None


# -- Service state -----------------------------------------------------------------


class ServiceState:
    """Pipeline + store + single-worker queue behind the app."""

    def __init__(
        self,
        pipeline: TwoStagePipeline,
        store_path: str | Path,
        default_sampler: SamplerConfig | None = None,
    ):
        self.pipeline = pipeline
        self.store = JobStore(store_path)
        self.default_sampler = default_sampler or SamplerConfig()
        self.queue: queue.Queue[str | None] = queue.Queue()
        self.model_lock = threading.RLock()
        self.worker: threading.Thread | None = None

    # lifecycle

    def start(self) -> None:
        self.store.requeue_running()
        for job_id in self.store.pending_ids():
            self.queue.put(job_id)
        self.worker = threading.Thread(target=self._worker_loop, daemon=True)
        self.worker.start()

    def stop(self) -> None:
        if self.worker is not None:
            self.queue.put(None)
            self.worker.join(timeout=60)
            self.worker = None

    def enqueue(self, kind: str, payload: dict) -> Job:
        job = self.store.create(kind, payload)
        self.queue.put(job.id)
        return job

    # job execution

    def _worker_loop(self) -> None:
        while True:
            job_id = self.queue.get()
            if job_id is None:
                return
            job = self.store.get(job_id)
            if job is None or job.status != "queued":
                continue
            self.store.set_running(job_id)
            try:
                image = self._run_job(job)
                self.store.set_done(job_id, png_bytes(image))
            except Exception as exc:  # noqa: BLE001 - failures land in the store
                self.store.set_failed(job_id, f"{type(exc).__name__}: {exc}")

    def sampler_from(self, payload: dict) -> SamplerConfig:
        cfg = self.default_sampler
        updates = {
            k: payload[k]
            for k in ("seed", "steps", "guidance_scale")
            if payload.get(k) is not None
        }
        return replace(cfg, **updates) if updates else cfg

    def _run_job(self, job: Job) -> np.ndarray:
        payload = job.payload
        sampler = self.sampler_from(payload)
        with self.model_lock:
            if job.kind == "generate":
                mask = None
                if payload.get("mask_png_b64"):
                    mask = CharSegMask(png_b64_decode(payload["mask_png_b64"]))
                boxes = None
                if payload.get("boxes") is not None:
                    boxes = BoundingBoxSet(np.array(payload["boxes"], dtype=np.float64))
                return self.pipeline.generate(
                    payload["prompt"],
                    boxes=boxes,
                    keywords=payload.get("keywords"),
                    mask=mask,
                    sampler=sampler,
                )
            if job.kind in ("inpaint", "remove"):
                image = png_b64_decode(payload["image_png_b64"])
                region = png_b64_decode(payload["region_png_b64"]) > 0
                boxes = None
                if payload.get("boxes") is not None:
                    boxes = BoundingBoxSet(np.array(payload["boxes"], dtype=np.float64))
                return self.pipeline.inpaint(
                    image,
                    region,
                    text=payload.get("text"),
                    boxes=boxes,
                    sampler=sampler,
                )
            raise DataError(f"unknown job kind {job.kind!r}")


# -- HTTP layer ---------------------------------------------------------------------


def _error(status: int, code: str, message: str) -> HTTPException:
    return HTTPException(status, detail={"code": code, "message": message})


def _check_square(arr: np.ndarray, size: int, what: str) -> None:
    if arr.shape[:2] != (size, size):
        raise _error(
            409,
            "mask_dimension_mismatch",
            f"{what} is {arr.shape[0]}x{arr.shape[1]}, expected {size}x{size}",
        )


def create_app(
    pipeline: TwoStagePipeline,
    store_path: str | Path,
    default_sampler: SamplerConfig | None = None,
) -> FastAPI:
    state = ServiceState(pipeline, store_path, default_sampler)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        state.start()
        try:
            yield
        finally:
            state.stop()

    app = FastAPI(title="textforge", lifespan=lifespan)
    app.state.service = state
    size = pipeline.image_size

    def layout_response(keywords: list[str], boxes: BoundingBoxSet) -> dict:
        mask = state.pipeline.render_mask(keywords, boxes)
        return {
            "keywords": keywords,
            "boxes": [[float(v) for v in row] for row in boxes.boxes],
            "image_size": size,
            "mask_png_b64": png_b64_encode(mask.grid),
            "mask_checksum": mask_checksum(mask.grid),
        }

    @app.post("/v1/layout")
    def post_layout(req: LayoutRequest) -> dict:
        if (req.boxes is None) != (req.keywords is None):
            raise _error(422, "incomplete_layout", "boxes and keywords go together")
        try:
            with state.model_lock:
                if req.boxes is not None:
                    if any(len(b) != 4 for b in req.boxes):
                        raise _error(
                            422, "invalid_layout", "boxes must be x0,y0,x1,y1 quadruples"
                        )
                    boxes = BoundingBoxSet(np.array(req.boxes, dtype=np.float64).reshape(-1, 4))
                    return layout_response(list(req.keywords or []), boxes)
                layout = state.pipeline.predict_layout(req.prompt)
                return layout_response(layout.keywords, layout.boxes)
        except MalformedPromptError as exc:
            raise _error(400, "unbalanced_quotes", str(exc)) from exc
        except TooManyKeywordsError as exc:
            raise _error(422, "too_many_keywords", str(exc)) from exc
        except (TextForgeError, ValueError) as exc:
            raise _error(422, "invalid_layout", str(exc)) from exc

    @app.post("/v1/generate")
    def post_generate(req: GenerateRequest) -> dict:
        sources = sum(x is not None for x in (req.boxes, req.mask_png_b64))
        if sources > 1:
            raise _error(
                422, "conflicting_condition_sources", "supply boxes or a mask, not both"
            )
        if (req.boxes is None) != (req.keywords is None):
            raise _error(422, "incomplete_layout", "boxes and keywords go together")
        try:
            _, spans = extract_keywords(req.prompt)
            prompt_keywords = [s.word for s in spans]
        except MalformedPromptError as exc:
            raise _error(400, "unbalanced_quotes", str(exc)) from exc
        if len(prompt_keywords) > state.pipeline.k_max:
            raise _error(422, "too_many_keywords", f"{len(prompt_keywords)} keywords")
        if req.mask_png_b64 is not None:
            _check_square(png_b64_decode(req.mask_png_b64), size, "mask")
        if req.boxes is not None and any(len(b) != 4 for b in req.boxes):
            raise _error(422, "invalid_layout", "boxes must be x0,y0,x1,y1 quadruples")
        job = state.enqueue("generate", req.model_dump())
        return {"job_id": job.id, "status": job.status}

    @app.post("/v1/inpaint")
    def post_inpaint(req: InpaintRequest) -> dict:
        image = png_b64_decode(req.image_png_b64)
        region = png_b64_decode(req.region_png_b64)
        _check_square(image, size, "image")
        _check_square(region, size, "region mask")
        if not (region > 0).any():
            raise _error(422, "empty_region", "region mask selects no pixels")
        kind = "inpaint" if req.text and req.text.strip() else "remove"
        job = state.enqueue(kind, req.model_dump())
        return {
            "job_id": job.id,
            "status": job.status,
            "kind": kind,
            "region_checksum": mask_checksum(region),
        }

    @app.get("/v1/jobs/{job_id}")
    def get_job(job_id: str) -> dict:
        job = state.store.get(job_id)
        if job is None:
            raise _error(404, "unknown_job", f"no job {job_id!r}")
        return job.public()

    @app.get("/v1/results/{job_id}")
    def get_result(job_id: str) -> dict:
        job = state.store.get(job_id)
        if job is None:
            raise _error(404, "unknown_job", f"no job {job_id!r}")
        if job.status == "failed":
            raise _error(409, "job_failed", job.error or "job failed")
        if job.status != "done" or job.result_png is None:
            raise _error(409, "job_not_finished", f"job is {job.status}")
        image_b64 = base64.b64encode(job.result_png).decode("ascii")
        return {
            "job_id": job.id,
            "kind": job.kind,
            "image_png_b64": image_b64,
            "image_checksum": mask_checksum(png_b64_decode(image_b64)),
        }

    return app
