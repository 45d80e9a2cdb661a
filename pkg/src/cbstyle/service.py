"""Live-steering service: REST endpoints for class/style assignment plus a
WebSocket that streams composited frames.

The streaming loop runs in its own thread and owns the pipeline; API
handlers never touch the pipeline directly. Assignment updates are
validated fully, then handed over through the pipeline's control queue, so
a frame is always rendered under exactly one assignment and an invalid
request has no effect at all.
"""

from __future__ import annotations

import base64
import json
import logging
import queue
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter, sleep
from typing import Iterator

import numpy as np
from fastapi import Body, FastAPI, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .image import Frame, StyleAssignment, frame_png_bytes
from .pipeline import MODES, PipelineConfig, StylingPipeline, read_frame_dir
from .segmenter import load_seg_model
from .styler import load_style_model
from .stubs import ConstantStyleStub, FullFrameSegStub, IdentityStyleStub

logger = logging.getLogger("cbstyle.service")

RUN_CONFIG_SCHEMA = 1
API_SCHEMA = 1
STATS_WINDOW = 100
CLIENT_QUEUE_SIZE = 8


@dataclass
class RunConfig:
    """On-disk JSON config shared by the `run` and `serve` commands."""

    seg_model: str
    styles: dict[str, str]
    frames: str
    assignment: dict[int, str]
    out: str | None = None
    feather_radius: int = 0
    mode: str = "parallel"
    worker_budget: int = 4
    port: int = 8765
    max_fps: float = 30.0

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            assignment=StyleAssignment(self.assignment),
            feather_radius=self.feather_radius,
            mode=self.mode,
            worker_budget=self.worker_budget,
        )


def load_run_config(path: Path | str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"run config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"corrupt run config {path}: {e}") from e
    if raw.get("schema") != RUN_CONFIG_SCHEMA:
        raise ValueError(f"unsupported run config schema in {path}: {raw.get('schema')}")
    if raw.get("mode", "parallel") not in MODES:
        raise ValueError(f"run config mode must be one of {MODES}")
    try:
        assignment = {int(k): str(v) for k, v in raw.get("assignment", {}).items()}
    except ValueError as e:
        raise ValueError(f"run config assignment keys must be class ids: {e}") from e
    config = RunConfig(
        seg_model=raw["seg_model"],
        styles={str(k): str(v) for k, v in raw["styles"].items()},
        frames=raw["frames"],
        assignment=assignment,
        out=raw.get("out"),
        feather_radius=int(raw.get("feather_radius", 0)),
        mode=raw.get("mode", "parallel"),
        worker_budget=int(raw.get("worker_budget", 4)),
        port=int(raw.get("port", 8765)),
        max_fps=float(raw.get("max_fps", 30.0)),
    )
    for style_id in config.assignment.values():
        if style_id not in config.styles:
            raise ValueError(f"assignment references undeclared style {style_id!r}")
    for name, spec in [("seg_model", config.seg_model)] + [
        (f"styles[{k}]", v) for k, v in config.styles.items()
    ]:
        if not spec.startswith("stub:") and not Path(spec).exists():
            raise FileNotFoundError(f"run config {name} path does not exist: {spec}")
    if not Path(config.frames).is_dir():
        raise FileNotFoundError(f"run config frames dir does not exist: {config.frames}")
    return config


def resolve_style_model(spec: str):
    """A checkpoint directory, `stub:identity`, or `stub:constant:R,G,B`."""
    if spec == "stub:identity":
        return IdentityStyleStub()
    if spec.startswith("stub:constant:"):
        color = [float(v) for v in spec.split(":", 2)[2].split(",")]
        if len(color) != 3:
            raise ValueError(f"constant style stub needs three channels: {spec!r}")
        return ConstantStyleStub(color)
    if spec.startswith("stub:"):
        raise ValueError(f"unknown style stub {spec!r}")
    return load_style_model(spec)


def resolve_seg_model(spec: str):
    """A checkpoint directory or `stub:full:CLASS_ID:NUM_CLASSES`."""
    if spec.startswith("stub:full:"):
        parts = spec.split(":")
        class_id = int(parts[2])
        num_classes = int(parts[3]) if len(parts) > 3 else class_id + 1
        return FullFrameSegStub(class_id, num_classes)
    if spec.startswith("stub:"):
        raise ValueError(f"unknown segmentation stub {spec!r}")
    return load_seg_model(spec)


class StreamHub:
    """Fan-out of (png bytes, timing dict) pairs to connected clients.

    Slow clients drop their oldest frames instead of stalling the stream.
    """

    def __init__(self):
        self._clients: list[queue.Queue] = []
        self._lock = threading.Lock()

    def register(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=CLIENT_QUEUE_SIZE)
        with self._lock:
            self._clients.append(q)
        return q

    def unregister(self, q: queue.Queue) -> None:
        with self._lock:
            if q in self._clients:
                self._clients.remove(q)

    def broadcast(self, item) -> None:
        with self._lock:
            clients = list(self._clients)
        for q in clients:
            while True:
                try:
                    q.put_nowait(item)
                    break
                except queue.Full:
                    try:
                        q.get_nowait()
                    except queue.Empty:
                        pass


def _style_thumbnail(model, size: int = 48) -> str:
    """Stylize a fixed gradient card so the thumbnail shows the style."""
    xs = np.linspace(0.0, 1.0, size)
    card = np.empty((size, size, 3))
    card[:, :, 0] = xs[None, :]
    card[:, :, 1] = xs[:, None]
    card[:, :, 2] = 0.5
    png = frame_png_bytes(model.stylize(Frame(card)))
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


class StylingService:
    """Owns the models, the streaming thread, and the steering state."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.seg_model = resolve_seg_model(config.seg_model)
        self.styles = {sid: resolve_style_model(spec) for sid, spec in config.styles.items()}
        self.class_names = list(getattr(self.seg_model, "class_names", []))
        self.frames = read_frame_dir(config.frames)
        self.hub = StreamHub()
        self.control: queue.Queue = queue.Queue()
        self._lock = threading.Lock()
        self._assignment = StyleAssignment(config.assignment)
        self._stats: list[dict] = []
        self._frames_seen = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._validate_assignment_entries(config.assignment)

    # -- steering state ----------------------------------------------------

    def _validate_assignment_entries(self, entries: dict[int, str]) -> None:
        for class_id, style_id in entries.items():
            if not 0 <= class_id < len(self.class_names):
                raise ValueError(f"unknown class id {class_id}")
            if style_id not in self.styles:
                raise ValueError(f"unknown style id {style_id!r}")

    def assignment(self) -> dict[int, str]:
        with self._lock:
            return dict(self._assignment.entries)

    def apply_assignment(self, entries: dict[int, str]) -> None:
        """Validated entries only; pushed atomically to the pipeline."""
        assignment = StyleAssignment(entries)
        with self._lock:
            self._assignment = assignment
        self.control.put(assignment)

    def record(self, timing: dict) -> None:
        with self._lock:
            self._frames_seen += 1
            self._stats.append(timing)
            if len(self._stats) > STATS_WINDOW:
                self._stats.pop(0)

    def stats(self) -> dict:
        with self._lock:
            window = list(self._stats)
            frames_seen = self._frames_seen
        if window:
            mean_interval = float(np.mean([t["interval_ms"] for t in window]))
            fps = 1000.0 / mean_interval if mean_interval > 0 else 0.0
            stage_means = {
                key: float(np.mean([t[key] for t in window]))
                for key in ("t_seg", "t_style", "t_composite", "t_total")
            }
        else:
            fps = 0.0
            stage_means = {k: 0.0 for k in ("t_seg", "t_style", "t_composite", "t_total")}
        return {
            "schema": API_SCHEMA,
            "fps": fps,
            "window": len(window),
            "frames_seen": frames_seen,
            "stage_means_ms": stage_means,
        }

    # -- streaming loop ----------------------------------------------------

    def _looping_frames(self) -> Iterator[Frame]:
        while not self._stop.is_set():
            for frame in self.frames:
                if self._stop.is_set():
                    return
                yield frame

    def _stream_loop(self) -> None:
        period = 1.0 / self.config.max_fps if self.config.max_fps > 0 else 0.0
        last_emit = perf_counter()
        pipeline = StylingPipeline(self.seg_model, self.styles, self.config.pipeline_config())
        try:
            for result in pipeline.process_stream(self._looping_frames(), self.control):
                if self._stop.is_set():
                    break
                if result.error is not None:
                    logger.warning("frame %d failed: %s", result.frame_index, result.error)
                    continue
                png = frame_png_bytes(result.frame)
                now = perf_counter()
                timing = {
                    "schema": API_SCHEMA,
                    "type": "timing",
                    "frame_index": result.frame_index,
                    "t_seg": result.timings.t_seg,
                    "t_style": result.timings.t_style,
                    "t_composite": result.timings.t_composite,
                    "t_total": result.timings.t_total,
                    "interval_ms": (now - last_emit) * 1000.0,
                }
                last_emit = now
                self.record(timing)
                self.hub.broadcast((png, timing))
                if period > 0.0:
                    remaining = period - (perf_counter() - now)
                    if remaining > 0:
                        sleep(remaining)
        finally:
            pipeline.close()
            self.hub.broadcast(None)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._stream_loop, name="stream-loop", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=10.0)
            self._thread = None


def create_app(service: StylingService, ui_dir: Path | str | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service.start()
        try:
            yield
        finally:
            service.stop()

    app = FastAPI(title="cbstyle", lifespan=lifespan)

    @app.get("/api/classes")
    def get_classes():
        return {
            "schema": API_SCHEMA,
            "classes": [
                {"id": i, "name": name} for i, name in enumerate(service.class_names)
            ],
        }

    @app.get("/api/styles")
    def get_styles():
        return {
            "schema": API_SCHEMA,
            "styles": [
                {"id": sid, "thumbnail": _style_thumbnail(model)}
                for sid, model in sorted(service.styles.items())
            ],
        }

    @app.get("/api/assignment")
    def get_assignment():
        entries = service.assignment()
        return {"schema": API_SCHEMA, "entries": {str(k): v for k, v in entries.items()}}

    @app.put("/api/assignment")
    def put_assignment(body: dict = Body(...)):
        if body.get("schema") != API_SCHEMA:
            return JSONResponse(
                status_code=422,
                content={"detail": f"unsupported schema {body.get('schema')!r}"},
            )
        raw = body.get("entries")
        if not isinstance(raw, dict):
            return JSONResponse(status_code=422, content={"detail": "entries must be an object"})
        entries: dict[int, str] = {}
        for key, style_id in raw.items():
            try:
                class_id = int(key)
            except (TypeError, ValueError):
                return JSONResponse(
                    status_code=422,
                    content={
                        "detail": f"class id {key!r} is not an integer",
                        "offending": {"class_id": key, "style_id": style_id},
                    },
                )
            if not 0 <= class_id < len(service.class_names):
                return JSONResponse(
                    status_code=422,
                    content={
                        "detail": f"unknown class id {class_id}",
                        "offending": {"class_id": key, "style_id": style_id},
                    },
                )
            if not isinstance(style_id, str) or style_id not in service.styles:
                return JSONResponse(
                    status_code=422,
                    content={
                        "detail": f"unknown style id {style_id!r}",
                        "offending": {"class_id": key, "style_id": style_id},
                    },
                )
            entries[class_id] = style_id
        service.apply_assignment(entries)
        return {"schema": API_SCHEMA, "entries": {str(k): v for k, v in entries.items()}}

    @app.get("/api/stats")
    def get_stats():
        return service.stats()

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        q = service.hub.register()

        def next_item():
            while not service._stop.is_set():
                try:
                    return q.get(timeout=0.25)
                except queue.Empty:
                    continue
            return None

        try:
            while True:
                item = await run_in_threadpool(next_item)
                if item is None:
                    break
                png, timing = item
                await ws.send_bytes(png)
                await ws.send_json(timing)
        except WebSocketDisconnect:
            pass
        finally:
            service.hub.unregister(q)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def serve(config: RunConfig, ui_dir: Path | str | None = None, port: int | None = None) -> None:
    import uvicorn

    service = StylingService(config)
    app = create_app(service, ui_dir=ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port if port is not None else config.port)
