"""HTTP service for interactive per-image segmentation sessions.

Sessions live in memory (LRU, cap 32). Optimization runs on a background
thread per session with single-flight semantics: a second optimize while one
is running gets 409. Status stays pollable throughout; results are immutable
once done until the next optimize.
"""

from __future__ import annotations

import io
import json
import threading
import uuid
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError

from .gdc import GdcConfig
from .images import mask_png_bytes, overlay_png_bytes
from .network import NetConfig, segment_image
from .scribbles import ScribbleSet, expand_scribbles, parse_scribbles
from .slic import default_n_segments, slic

MAX_SIDE = 2048
SESSION_CAP = 32


@dataclass
class Session:
    id: str
    image: np.ndarray
    scribbles: ScribbleSet | None = None
    status: str = "idle"  # idle | optimizing | done | failed
    step: int = 0
    total: int = 0
    loss: float | None = None
    message: str | None = None
    result_mask: np.ndarray | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    def __init__(self, cap: int = SESSION_CAP):
        self._cap = cap
        self._sessions: OrderedDict[str, Session] = OrderedDict()
        self._lock = threading.Lock()

    def create(self, image: np.ndarray) -> Session:
        s = Session(id=uuid.uuid4().hex[:12], image=image)
        with self._lock:
            self._sessions[s.id] = s
            while len(self._sessions) > self._cap:
                self._sessions.popitem(last=False)
        return s

    def get(self, sid: str) -> Session | None:
        with self._lock:
            s = self._sessions.get(sid)
            if s is not None:
                self._sessions.move_to_end(sid)
            return s


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"error": message}, status_code=status)


def _run_job(session: Session, config: NetConfig, seed: int) -> None:
    def progress(step, total, loss):
        with session.lock:
            session.step = step
            session.loss = loss

    try:
        image = session.image
        sp = slic(image, default_n_segments(*image.shape[1:]))
        mask, _ = expand_scribbles(sp, session.scribbles)
        if mask.labeled_count() == 0:
            raise ValueError("scribbles did not label any superpixel")
        result, trace = segment_image(image, mask, config, seed, progress=progress)
        with session.lock:
            session.result_mask = result.mask
            session.loss = trace[-1]
            session.step = config.steps
            session.status = "done"
    except Exception as e:  # noqa: BLE001 - reported through status
        with session.lock:
            session.status = "failed"
            session.message = str(e)


def create_app(store: SessionStore | None = None) -> FastAPI:
    app = FastAPI(title="gdcseg")
    sessions = store or SessionStore()

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await request.body()
        try:
            with Image.open(io.BytesIO(body)) as im:
                if im.width > MAX_SIDE or im.height > MAX_SIDE:
                    return _error(413, f"image exceeds {MAX_SIDE}x{MAX_SIDE}")
                rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except (UnidentifiedImageError, OSError):
            return _error(400, "body must be a PNG image")
        image = np.ascontiguousarray(rgb.transpose(2, 0, 1))
        s = sessions.create(image)
        return JSONResponse({"id": s.id}, status_code=201)

    @app.put("/sessions/{sid}/scribbles")
    async def put_scribbles(sid: str, request: Request):
        s = sessions.get(sid)
        if s is None:
            return _error(404, "unknown session")
        try:
            scr = parse_scribbles((await request.body()).decode("utf-8"),
                                  s.image.shape[1:])
        except (ValueError, UnicodeDecodeError) as e:
            return _error(400, f"malformed scribbles: {e}")
        with s.lock:
            if s.status == "optimizing":
                return _error(409, "optimization in progress")
            s.scribbles = scr
        return Response(status_code=204)

    @app.post("/sessions/{sid}/optimize")
    async def optimize(sid: str, request: Request):
        s = sessions.get(sid)
        if s is None:
            return _error(404, "unknown session")
        body = await request.body()
        try:
            opts = json.loads(body) if body else {}
            if not isinstance(opts, dict):
                raise ValueError("body must be a JSON object")
        except ValueError as e:
            return _error(400, f"malformed options: {e}")
        if s.scribbles is None or not s.scribbles.strokes:
            return _error(400, "no scribbles on this session")
        try:
            config = NetConfig(
                num_categories=max(s.scribbles.categories()) + 1,
                steps=int(opts.get("steps", 50)),
                inference_samples=int(opts.get("samples", 50)),
                gdc=GdcConfig(sigma=float(opts.get("sigma", 0.2)),
                              mode="per_direction", adaptive_scale=True),
                stem_seed=int(opts.get("seed", 0)),
            )
        except ValueError as e:
            return _error(400, str(e))
        seed = int(opts.get("seed", 0))
        with s.lock:
            if s.status == "optimizing":
                return _error(409, "optimization already running")
            s.status = "optimizing"
            s.step = 0
            s.total = config.steps
            s.loss = None
            s.message = None
            s.result_mask = None
        threading.Thread(target=_run_job, args=(s, config, seed), daemon=True).start()
        return JSONResponse({"id": s.id, "status": "optimizing"}, status_code=202)

    @app.get("/sessions/{sid}/status")
    def status(sid: str):
        s = sessions.get(sid)
        if s is None:
            return _error(404, "unknown session")
        with s.lock:
            return {"status": s.status, "step": s.step, "total": s.total,
                    "loss": s.loss, "message": s.message}

    def _mask_response(sid: str, as_overlay: bool):
        s = sessions.get(sid)
        if s is None:
            return _error(404, "unknown session")
        with s.lock:
            if s.status != "done" or s.result_mask is None:
                return _error(409, "no result yet")
            mask = s.result_mask
            image = s.image
        data = overlay_png_bytes(image, mask) if as_overlay else mask_png_bytes(mask)
        return Response(content=data, media_type="image/png")

    @app.get("/sessions/{sid}/mask.png")
    def mask_png(sid: str):
        return _mask_response(sid, as_overlay=False)

    @app.get("/sessions/{sid}/overlay.png")
    def overlay_png(sid: str):
        return _mask_response(sid, as_overlay=True)

    _mount_ui(app)
    return app


def _mount_ui(app: FastAPI) -> None:
    """Serve the browser client when a built frontend sits next to the package."""
    from pathlib import Path

    candidates = [Path(__file__).resolve().parents[2] / "frontend" / "dist"]
    import os
    if os.environ.get("GDC_UI_DIR"):
        candidates.insert(0, Path(os.environ["GDC_UI_DIR"]))
    for c in candidates:
        if c.is_dir():
            from fastapi.staticfiles import StaticFiles
            app.mount("/", StaticFiles(directory=str(c), html=True), name="ui")
            return
