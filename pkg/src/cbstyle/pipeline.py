"""Per-frame orchestration: segmentation and styling side by side.

Parallel mode runs the segmentation branch and one branch per distinct
assigned style on a worker pool; sequential mode runs the same calls one
after another. Both modes produce bit-identical frames because every
branch performs exactly the same computation on the same inputs.
Parallelism never crosses frame boundaries, so stream order is preserved
and an assignment update applies atomically between frames.
"""

from __future__ import annotations

import json
import queue
import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from time import perf_counter
from typing import Iterable, Iterator, Mapping

import numpy as np

from .image import ClassMask, Frame, StyleAssignment, composite_multi, feather_mask
from .image import load_frame_png, save_frame_png
from .segmenter import extract_mask
from .stubs import DelaySegStub, DelayStyleStub, FullFrameSegStub, IdentityStyleStub

MODES = ("parallel", "sequential")
FRAME_NAME_FORMAT = "frame_{:06d}.png"
_FRAME_NAME_RE = re.compile(r"^frame_(\d{6})\.png$")


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage


@dataclass(frozen=True)
class FrameTimings:
    frame_index: int
    t_seg: float
    t_style: float
    t_composite: float
    t_total: float


@dataclass(frozen=True)
class PipelineConfig:
    assignment: StyleAssignment = field(default_factory=StyleAssignment.empty)
    feather_radius: int = 0
    mode: str = "parallel"
    worker_budget: int = 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.worker_budget < 1:
            raise ValueError(f"worker budget must be >= 1, got {self.worker_budget}")
        if self.feather_radius < 0:
            raise ValueError(f"feather radius must be >= 0, got {self.feather_radius}")


@dataclass(frozen=True)
class FrameResult:
    """One stream output: either a composited frame or an error record."""

    frame_index: int
    frame: Frame | None
    timings: FrameTimings | None
    error: str | None = None


class StylingPipeline:
    """Owns the worker pool and applies one assignment per frame."""

    def __init__(self, seg_model, styles: Mapping[str, object], config: PipelineConfig):
        for style_id in config.assignment.style_ids():
            if style_id not in styles:
                raise ValueError(f"assignment references unloaded style {style_id!r}")
        self.seg_model = seg_model
        self.styles = dict(styles)
        self.config = config
        self._pool = ThreadPoolExecutor(max_workers=config.worker_budget)

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self) -> "StylingPipeline":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _seg_branch(self, frame: Frame, class_ids: list[int]):
        t0 = perf_counter()
        probs = self.seg_model.predict(frame)
        masks = [extract_mask(probs, c) for c in class_ids]
        t1 = perf_counter()
        return masks, (t1 - t0) * 1000.0, t1

    def _style_branch(self, frame: Frame, style_id: str):
        t0 = perf_counter()
        out = self.styles[style_id].stylize(frame)
        t1 = perf_counter()
        return out, (t1 - t0) * 1000.0, t1

    def process_frame(self, frame: Frame, frame_index: int = 0) -> tuple[Frame, FrameTimings]:
        t_start = perf_counter()
        assignment = self.config.assignment
        if not assignment.entries:
            t_total = (perf_counter() - t_start) * 1000.0
            return frame, FrameTimings(frame_index, 0.0, 0.0, 0.0, t_total)

        class_ids = sorted(assignment.entries)
        style_ids = assignment.style_ids()
        for style_id in style_ids:
            if style_id not in self.styles:
                raise PipelineStageError(
                    "styling", KeyError(f"style {style_id!r} is not loaded")
                )

        if self.config.mode == "parallel":
            dispatch = perf_counter()
            seg_future = self._pool.submit(self._seg_branch, frame, class_ids)
            style_futures = [
                (sid, self._pool.submit(self._style_branch, frame, sid)) for sid in style_ids
            ]
            try:
                masks, t_seg, _ = seg_future.result()
            except Exception as e:
                raise PipelineStageError("segmentation", e) from e
            styled: dict[str, Frame] = {}
            last_style_done = dispatch
            for sid, future in style_futures:
                try:
                    out, _, done = future.result()
                except Exception as e:
                    raise PipelineStageError(f"styling[{sid}]", e) from e
                styled[sid] = out
                last_style_done = max(last_style_done, done)
            t_style = (last_style_done - dispatch) * 1000.0
        else:
            try:
                masks, t_seg, _ = self._seg_branch(frame, class_ids)
            except Exception as e:
                raise PipelineStageError("segmentation", e) from e
            styled = {}
            t_style = 0.0
            for sid in style_ids:
                try:
                    out, dur, _ = self._style_branch(frame, sid)
                except Exception as e:
                    raise PipelineStageError(f"styling[{sid}]", e) from e
                styled[sid] = out
                t_style += dur

        t0 = perf_counter()
        try:
            use_masks: list = masks
            if self.config.feather_radius > 0:
                use_masks = [feather_mask(m, self.config.feather_radius) for m in masks]
            out = composite_multi(frame, styled, use_masks, assignment)
        except Exception as e:
            raise PipelineStageError("compositing", e) from e
        t_end = perf_counter()
        t_composite = (t_end - t0) * 1000.0
        t_total = (t_end - t_start) * 1000.0
        return out, FrameTimings(frame_index, t_seg, t_style, t_composite, t_total)

    def process_stream(
        self,
        frames: Iterable[Frame],
        control: "queue.Queue[StyleAssignment] | None" = None,
    ) -> Iterator[FrameResult]:
        """Process frames in order; assignment updates apply between frames."""
        for index, frame in enumerate(frames):
            if control is not None:
                latest = None
                while True:
                    try:
                        latest = control.get_nowait()
                    except queue.Empty:
                        break
                if latest is not None:
                    self.config = replace(self.config, assignment=latest)
            try:
                out, timings = self.process_frame(frame, frame_index=index)
                yield FrameResult(index, out, timings)
            except Exception as e:
                yield FrameResult(index, None, None, error=str(e))


def process_frame(
    frame: Frame,
    seg_model,
    styles: Mapping[str, object],
    config: PipelineConfig,
) -> tuple[Frame, FrameTimings]:
    with StylingPipeline(seg_model, styles, config) as pipeline:
        return pipeline.process_frame(frame)


def process_stream(
    frames: Iterable[Frame],
    seg_model,
    styles: Mapping[str, object],
    config: PipelineConfig,
    control: "queue.Queue[StyleAssignment] | None" = None,
) -> Iterator[FrameResult]:
    with StylingPipeline(seg_model, styles, config) as pipeline:
        yield from pipeline.process_stream(frames, control)


@dataclass(frozen=True)
class StubDelays:
    seg_ms: float
    style_ms: float


@dataclass(frozen=True)
class BenchmarkReport:
    frames: int
    mode: str
    mean_ms: float
    median_ms: float
    p95_ms: float
    fps: float
    stage_means_ms: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "frames": self.frames,
            "mode": self.mode,
            "mean_ms": self.mean_ms,
            "median_ms": self.median_ms,
            "p95_ms": self.p95_ms,
            "fps": self.fps,
            "stage_means_ms": dict(self.stage_means_ms),
        }

    def write_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def benchmark(
    frames: list[Frame],
    config: PipelineConfig,
    stub_delays: StubDelays | None = None,
    seg_model=None,
    styles: Mapping[str, object] | None = None,
) -> BenchmarkReport:
    """Measure per-frame latency over a frame list.

    With `stub_delays`, both model stages are replaced by sleep-injected
    stubs so the report isolates orchestration overhead.
    """
    if len(frames) < 10:
        raise ValueError(f"need at least 10 frames for stable statistics, got {len(frames)}")

    if stub_delays is not None:
        assignment = config.assignment
        if not assignment.entries:
            assignment = StyleAssignment({1: "stub"})
            config = replace(config, assignment=assignment)
        first_class = min(assignment.entries)
        num_classes = max(assignment.entries) + 1
        seg_model = DelaySegStub(
            FullFrameSegStub(first_class, num_classes), stub_delays.seg_ms
        )
        styles = {
            sid: DelayStyleStub(IdentityStyleStub(), stub_delays.style_ms)
            for sid in assignment.style_ids()
        }
    if seg_model is None or styles is None:
        raise ValueError("benchmark needs models (or stub delays)")

    timings: list[FrameTimings] = []
    with StylingPipeline(seg_model, styles, config) as pipeline:
        for index, frame in enumerate(frames):
            _, t = pipeline.process_frame(frame, frame_index=index)
            timings.append(t)

    totals = [t.t_total for t in timings]
    mean_ms = statistics.fmean(totals)
    return BenchmarkReport(
        frames=len(frames),
        mode=config.mode,
        mean_ms=mean_ms,
        median_ms=statistics.median(totals),
        p95_ms=float(np.percentile(totals, 95)),
        fps=1000.0 / mean_ms,
        stage_means_ms={
            "seg": statistics.fmean(t.t_seg for t in timings),
            "style": statistics.fmean(t.t_style for t in timings),
            "composite": statistics.fmean(t.t_composite for t in timings),
            "total": mean_ms,
        },
    )


def frame_file_name(index: int) -> str:
    return FRAME_NAME_FORMAT.format(index)


def read_frame_dir(path: Path | str) -> list[Frame]:
    """Load frame_%06d.png files in index order."""
    path = Path(path)
    indexed = []
    for entry in path.iterdir():
        m = _FRAME_NAME_RE.match(entry.name)
        if m:
            indexed.append((int(m.group(1)), entry))
    if not indexed:
        raise FileNotFoundError(f"no frame_NNNNNN.png files in {path}")
    return [load_frame_png(p) for _, p in sorted(indexed)]


def write_frame_dir(frames: Iterable[Frame], path: Path | str) -> list[Path]:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = []
    for index, frame in enumerate(frames):
        target = path / frame_file_name(index)
        save_frame_png(frame, target)
        written.append(target)
    return written
