"""HTTP JSON API driving the auditor console: ballot upload, prompt
segmentation, pool enrollment, query ranking, heatmap retrieval.

State lives in memory; the pool is write-through persisted on every
enrollment when a pool path is configured.  Rankings are served verbatim
from the retrieval module (no re-scoring here).
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import encoder, pgm, retrieval, segmentation
from .errors import DuplicateEnrollmentError, EmptyPoolError, NoMarkFoundError
from .losses import LossConfig


@dataclass
class SegmentEntry:
    segment_id: str
    ballot_id: str
    segment: segmentation.MaskSegment
    embedding: np.ndarray
    alias: str | None = None


@dataclass
class BallotEntry:
    ballot_id: str
    image: np.ndarray
    segment_ids: list = field(default_factory=list)


class ServiceState:
    def __init__(self, params, pool: retrieval.Pool, pool_path=None, cfg: LossConfig = LossConfig()):
        self.params = params
        self.pool = pool
        self.pool_path = pool_path
        self.cfg = cfg
        self.ballots: dict[str, BallotEntry] = {}
        self.segments: dict[str, SegmentEntry] = {}
        self.lock = threading.RLock()
        self._ballot_counter = 0
        self._segment_counter = 0

    def next_ballot_id(self) -> str:
        with self.lock:
            bid = f"b{self._ballot_counter}"
            self._ballot_counter += 1
            return bid

    def next_segment_id(self) -> str:
        with self.lock:
            sid = f"s{self._segment_counter}"
            self._segment_counter += 1
            return sid


class SegmentBody(BaseModel):
    kind: str
    x: float | None = None
    y: float | None = None
    x0: float | None = None
    y0: float | None = None
    x1: float | None = None
    y1: float | None = None


class EnrollBody(BaseModel):
    segment_id: str


class QueryBody(BaseModel):
    segment_id: str
    k: int = 5
    exclude_same_ballot: bool = False


def _decode_upload(blob: bytes) -> np.ndarray:
    """Grayscale [0,1] image from PGM or 8-bit grayscale PNG bytes."""
    if blob[:2] in (b"P2", b"P5"):
        return pgm.decode_pgm(blob)
    if blob[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        with Image.open(io.BytesIO(blob)) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    raise ValueError("unsupported image format")


def _crop_png(crop) -> bytes:
    from PIL import Image

    data = np.clip(np.rint(crop.pixels * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def _prompt_from_body(body: SegmentBody) -> segmentation.SegmentPrompt:
    if body.kind == "point":
        if body.x is None or body.y is None:
            raise ValueError("point prompt needs x and y")
        return segmentation.SegmentPrompt(kind="point", point=(body.x, body.y))
    if body.kind == "box":
        if None in (body.x0, body.y0, body.x1, body.y1):
            raise ValueError("box prompt needs x0, y0, x1, y1")
        return segmentation.SegmentPrompt(kind="box", box=(body.x0, body.y0, body.x1, body.y1))
    raise ValueError(f"unknown prompt kind {body.kind!r}")


def build_app(model_path=None, pool_path=None, allow_origin: str = "*",
              params=None, pool=None, cfg: LossConfig = LossConfig()) -> FastAPI:
    """Assemble the app; accepts either file paths or in-memory objects."""
    if params is None:
        if model_path is None:
            raise ValueError("need model_path or params")
        params = encoder.load_params(model_path)
    if pool is None:
        if pool_path is not None and Path(pool_path).exists():
            pool = retrieval.load_pool(pool_path)
            if pool.dim != params.config.embedding_dim:
                raise ValueError(f"pool dim {pool.dim} does not match model dim {params.config.embedding_dim}")
        else:
            pool = retrieval.Pool(dim=params.config.embedding_dim)
    state = ServiceState(params=params, pool=pool, pool_path=pool_path, cfg=cfg)

    app = FastAPI(title="markmatch", docs_url=None, redoc_url=None)
    app.state.service = state
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[allow_origin] if allow_origin != "*" else ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(RequestValidationError)
    async def malformed_body(_request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": str(exc.errors()[:1])})

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"detail": message})

    @app.post("/api/ballots")
    async def upload_ballot(request: Request):
        blob = await request.body()
        try:
            image = _decode_upload(blob)
        except Exception:
            return error(415, "body is neither PGM nor 8-bit grayscale PNG")
        ballot_id = state.next_ballot_id()
        with state.lock:
            state.ballots[ballot_id] = BallotEntry(ballot_id=ballot_id, image=image)
        return {"ballot_id": ballot_id}

    @app.post("/api/ballots/{ballot_id}/segments")
    async def segment_ballot(ballot_id: str, body: SegmentBody):
        ballot = state.ballots.get(ballot_id)
        if ballot is None:
            return error(404, f"unknown ballot {ballot_id!r}")
        try:
            prompt = _prompt_from_body(body)
            seg = segmentation.segment(ballot.image, prompt, source_ballot=ballot_id)
        except NoMarkFoundError as exc:
            return error(422, str(exc))
        except ValueError as exc:
            return error(400, str(exc))
        emb = encoder.embed(state.params, seg.crop)
        segment_id = state.next_segment_id()
        with state.lock:
            state.segments[segment_id] = SegmentEntry(
                segment_id=segment_id, ballot_id=ballot_id, segment=seg, embedding=emb
            )
            ballot.segment_ids.append(segment_id)
        return {
            "segment_id": segment_id,
            "bbox": list(seg.bbox),
            "rle_mask": segmentation.mask_to_rle(seg.mask),
        }

    @app.get("/api/segments/{segment_id}/crop")
    async def segment_crop(segment_id: str):
        entry = state.segments.get(segment_id)
        if entry is None:
            return error(404, f"unknown segment {segment_id!r}")
        return Response(content=_crop_png(entry.segment.crop), media_type="image/png")

    @app.post("/api/pool")
    async def enroll(body: EnrollBody):
        entry = state.segments.get(body.segment_id)
        if entry is None:
            return error(404, f"unknown segment {body.segment_id!r}")
        with state.lock:
            if entry.alias is not None:
                return error(409, f"segment {body.segment_id!r} already enrolled as {entry.alias}")
            mark_index = sum(1 for r in state.pool.records if r.ballot_id == entry.ballot_id)
            try:
                alias = state.pool.enroll(entry.embedding, ballot_id=entry.ballot_id, mark_index=mark_index)
            except DuplicateEnrollmentError as exc:
                return error(409, str(exc))
            entry.alias = alias
            if state.pool_path is not None:
                retrieval.save_pool(state.pool, state.pool_path)
        return {"alias": alias}

    @app.get("/api/pool")
    async def list_pool():
        with state.lock:
            return [{"alias": r.alias, "ballot_id": r.ballot_id} for r in state.pool.records]

    @app.post("/api/query")
    async def query(body: QueryBody):
        entry = state.segments.get(body.segment_id)
        if entry is None:
            return error(404, f"unknown segment {body.segment_id!r}")
        if body.k < 1:
            return error(400, "k must be >= 1")
        pool = state.pool
        if body.exclude_same_ballot:
            pool = pool.subset(lambda r: r.ballot_id != entry.ballot_id)
        try:
            matches = retrieval.query(pool, entry.embedding, k=body.k, cfg=state.cfg)
        except EmptyPoolError as exc:
            return error(409, str(exc))
        return {
            "matches": [
                {
                    "rank": m.rank,
                    "alias": m.alias,
                    "softmax_score": m.softmax_score,
                    "raw_logit": m.raw_logit,
                }
                for m in matches
            ]
        }

    @app.get("/api/heatmap")
    async def heatmap(queries: str = ""):
        ids = [q for q in queries.split(",") if q]
        if not ids:
            return error(400, "need ?queries=<segment ids, comma-separated>")
        embs, labels = [], []
        for sid in ids:
            entry = state.segments.get(sid)
            if entry is None:
                return error(404, f"unknown segment {sid!r}")
            embs.append(entry.embedding)
            labels.append(entry.alias or f"q:{sid}")
        try:
            matrix = retrieval.heatmap(state.pool, embs, cfg=state.cfg, query_labels=labels)
        except ValueError as exc:
            return error(409 if "empty" in str(exc) else 400, str(exc))
        return {
            "pool_aliases": matrix.pool_aliases,
            "query_aliases": matrix.query_aliases,
            "cells": matrix.cells.tolist(),
        }

    return app
