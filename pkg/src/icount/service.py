"""JSON-over-HTTP session API for the interactive counting loop.

Endpoints: POST /sessions, GET /sessions/{id}, POST /sessions/{id}/feedback,
DELETE /sessions/{id}.  Errors come back as {"error": {"code", "message"}}.
The address is taken from ICOUNT_ADDR ("host:port") or a JSON config file;
a built UI bundle, when present, is served at /ui.
"""

from __future__ import annotations

import base64
import json
import os
import struct
import threading
import time
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .adaptation import AdaptConfig
from .counter import (
    Miscalibration,
    ToyCounter,
    synthesize_counter,
    synthesize_counter_from_grid,
)
from .density import MIN_GRID_SIDE, DotScene, place_dots
from .feedback import RangeFamily
from .gridio import DGRID_MAGIC, rle_encode_rows
from .segmentation import SegmentationConfig
from .session import CountingSession, StaleRegionError

DEFAULT_TTL_S = 30 * 60
DOT_NMS_RADIUS = 4.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


class SceneSpec(BaseModel):
    height: int
    width: int
    sigma: float = 2.0
    dots: list[tuple[float, float]] = Field(default_factory=list)


class MiscalSpec(BaseModel):
    kind: str = "none"
    alpha: float = 1.0
    alphas: list[float] | None = None
    center: tuple[float, float] | None = None
    radius: float = 4.0
    magnitude: float = 0.0

    def build(self) -> Miscalibration:
        if self.kind == "none":
            return Miscalibration.none()
        if self.kind == "global_scale":
            return Miscalibration.global_scale(self.alpha)
        if self.kind == "channel_scale":
            return Miscalibration.channel_scale(self.alphas or [])
        if self.kind == "local_blob":
            if self.center is None:
                raise ValueError("local_blob needs a center")
            return Miscalibration.local_blob(self.center, self.radius, self.magnitude)
        raise ValueError(f"unknown miscalibration kind {self.kind!r}")


class CreateSessionRequest(BaseModel):
    scene: SceneSpec | None = None
    dgrid_b64: str | None = None  # alternatively: a base64-packed DGRID file
    miscal: MiscalSpec = Field(default_factory=MiscalSpec)
    seed: int = 0
    blind: bool = False
    reset_per_interaction: bool = False
    count_limit: float = 4.0
    range_interval: float = 1.0
    adapt: dict = Field(default_factory=dict)
    segmentation: dict = Field(default_factory=dict)


class FeedbackRequest(BaseModel):
    region_id: int
    range_index: int
    generation: int | None = None


class SessionEntry:
    def __init__(self, session: CountingSession, blind: bool):
        self.session = session
        self.blind = blind
        self.lock = threading.RLock()
        self.last_access = time.monotonic()

    def touch(self):
        self.last_access = time.monotonic()


class SessionStore:
    """In-memory sessions with lazy idle-TTL eviction."""

    def __init__(self, ttl_s: float = DEFAULT_TTL_S, snapshot_dir=None):
        self.ttl_s = ttl_s
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None
        self._entries: dict[str, SessionEntry] = {}
        self._lock = threading.Lock()

    def sweep(self):
        now = time.monotonic()
        with self._lock:
            stale = [k for k, e in self._entries.items() if now - e.last_access > self.ttl_s]
            for k in stale:
                del self._entries[k]

    def put(self, session: CountingSession, blind: bool) -> str:
        self.sweep()
        session_id = uuid.uuid4().hex
        with self._lock:
            self._entries[session_id] = SessionEntry(session, blind)
        if self.snapshot_dir is not None:
            session.save(self.snapshot_dir / session_id)
        return session_id

    def get(self, session_id: str) -> SessionEntry:
        self.sweep()
        with self._lock:
            entry = self._entries.get(session_id)
        if entry is None:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        entry.touch()
        return entry

    def delete(self, session_id: str) -> None:
        with self._lock:
            if session_id not in self._entries:
                raise ApiError(404, "not_found", f"unknown session {session_id!r}")
            del self._entries[session_id]

    def snapshot(self, session_id: str) -> None:
        if self.snapshot_dir is None:
            return
        entry = self.get(session_id)
        entry.session.save(self.snapshot_dir / session_id)


def _decode_dgrid_b64(payload: str) -> np.ndarray:
    try:
        raw = base64.b64decode(payload)
    except Exception as exc:
        raise ApiError(400, "bad_request", f"dgrid_b64 is not valid base64: {exc}")
    if len(raw) < 12 or raw[:4] != DGRID_MAGIC:
        raise ApiError(400, "bad_request", "dgrid payload lacks the DG01 header")
    h, w = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + 4 * h * w:
        raise ApiError(400, "bad_request", "dgrid payload length mismatch")
    if h < MIN_GRID_SIDE or w < MIN_GRID_SIDE:
        raise ApiError(400, "bad_request", f"density grids must be at least {MIN_GRID_SIDE}px per side")
    grid = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)
    if grid.min() < 0 or not np.isfinite(grid).all():
        raise ApiError(400, "bad_request", "density values must be finite and non-negative")
    return grid


def _density_b64(prediction: np.ndarray) -> tuple[str, float]:
    peak = float(prediction.max())
    if peak <= 0:
        data = np.zeros(prediction.shape, np.uint8)
    else:
        data = np.round(prediction / peak * 255).astype(np.uint8)
    return base64.b64encode(data.tobytes()).decode("ascii"), peak


def build_state(session: CountingSession, blind: bool) -> dict:
    seg = session.full_segmentation
    regions = []
    for r in sorted(seg.regions, key=lambda reg: reg.id):
        dots = place_dots(session.prediction, r.pixels, DOT_NMS_RADIUS)
        regions.append(
            {
                "id": r.id,
                "sum": r.sum,
                "area": r.area,
                "kind": r.kind,
                "dots": [[x, y] for x, y in dots],
            }
        )
    density_b64, density_max = _density_b64(session.prediction)
    state = {
        "iteration": session.iteration,
        "generation": session.generation,
        "feedback_count": len(session.records),
        "grid": {"height": session.prediction.shape[0], "width": session.prediction.shape[1]},
        "predicted_total": session.predicted_total,
        "labels_rle": rle_encode_rows(seg.labels),
        "regions": regions,
        "ranges": [
            {"index": i, "label": b.label(), "lower": b.to_json()[0], "upper": b.to_json()[1]}
            for i, b in enumerate(session.range_family.bins)
        ],
        "density_b64": density_b64,
        "density_max": density_max,
        "history": list(session.history),
    }
    if not blind and session.ground_truth is not None:
        state["gt_total"] = float(session.ground_truth.sum())
    return state


def create_app(store: SessionStore | None = None) -> FastAPI:
    app = FastAPI(title="interactive counting service")
    app.state.store = store or SessionStore()

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"error": {"code": exc.code, "message": exc.message}},
        )

    @app.exception_handler(ValueError)
    async def _value_error(_req: Request, exc: ValueError):
        return JSONResponse(
            status_code=400,
            content={"error": {"code": "bad_request", "message": str(exc)}},
        )

    def _store() -> SessionStore:
        return app.state.store

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        if (req.scene is None) == (req.dgrid_b64 is None):
            raise ApiError(400, "bad_request", "provide exactly one of scene or dgrid_b64")
        if req.scene is not None:
            scene = DotScene(
                height=req.scene.height,
                width=req.scene.width,
                sigma=req.scene.sigma,
                dots=tuple(tuple(d) for d in req.scene.dots),
            )
            features, weights, gt = synthesize_counter(scene, req.miscal.build(), seed=req.seed)
        else:
            grid = _decode_dgrid_b64(req.dgrid_b64)
            features, weights, gt = synthesize_counter_from_grid(
                grid, req.miscal.build(), seed=req.seed
            )
        session = CountingSession(
            ToyCounter(features, weights, gt),
            seg_config=SegmentationConfig(**req.segmentation),
            adapt_config=AdaptConfig(**req.adapt),
            range_family=RangeFamily(count_limit=req.count_limit, interval=req.range_interval),
            seed=req.seed,
            reset_per_interaction=req.reset_per_interaction,
        )
        session_id = _store().put(session, req.blind)
        return {"session_id": session_id, "state": build_state(session, req.blind)}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        entry = _store().get(session_id)
        with entry.lock:
            return {"session_id": session_id, "state": build_state(entry.session, entry.blind)}

    @app.post("/sessions/{session_id}/feedback")
    def submit_feedback(session_id: str, req: FeedbackRequest):
        entry = _store().get(session_id)
        with entry.lock:
            session = entry.session
            if req.generation is not None and req.generation != session.generation:
                raise ApiError(
                    409,
                    "stale_region",
                    "segmentation changed; refresh the session state and reselect",
                )
            bins = session.range_family.bins
            if not 0 <= req.range_index < len(bins):
                raise ApiError(400, "bad_request", f"range index {req.range_index} out of bounds")
            t0 = time.perf_counter()
            try:
                result = session.submit(req.region_id, bins[req.range_index])
            except StaleRegionError as exc:
                raise ApiError(409, "stale_region", str(exc)) from exc
            payload_t0 = time.perf_counter()
            state = build_state(session, entry.blind)
            payload_ms = (time.perf_counter() - payload_t0) * 1000.0
            _store().snapshot(session_id)
            return {
                "session_id": session_id,
                "state": state,
                "timings": {
                    "segment_ms": result.segment_ms,
                    "adapt_ms": result.adapt_ms,
                    "payload_ms": payload_ms,
                    "total_ms": (time.perf_counter() - t0) * 1000.0,
                },
                "loss_trajectory": result.losses,
            }

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        _store().delete(session_id)

    ui_dir = os.environ.get("ICOUNT_UI_DIR", "frontend/dist")
    if Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def main() -> int:
    import uvicorn

    addr = os.environ.get("ICOUNT_ADDR", "")
    config_path = os.environ.get("ICOUNT_CONFIG", "")
    host, port = "127.0.0.1", 8008
    ttl = DEFAULT_TTL_S
    snapshot_dir = None
    if config_path:
        cfg = json.loads(Path(config_path).read_text())
        host = cfg.get("host", host)
        port = int(cfg.get("port", port))
        ttl = float(cfg.get("ttl_s", ttl))
        snapshot_dir = cfg.get("snapshot_dir", snapshot_dir)
    if addr:
        host, _, port_s = addr.rpartition(":")
        port = int(port_s)
        host = host or "127.0.0.1"
    app = create_app(SessionStore(ttl_s=ttl, snapshot_dir=snapshot_dir))
    uvicorn.run(app, host=host, port=port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
