"""Stub models for pipeline tests and orchestration-overhead benchmarks.

Stubs satisfy the same duck types as trained models: style stubs expose
.stylize(frame), segmentation stubs expose .predict(frame).
"""

from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np

from .image import Frame
from .segmenter import LabelMap


class IdentityStyleStub:
    """Returns the input frame unchanged."""

    def stylize(self, frame: Frame) -> Frame:
        return frame


class ConstantStyleStub:
    """Paints the whole frame one color."""

    def __init__(self, color: Sequence[float]):
        self.color = tuple(float(c) for c in color)

    def stylize(self, frame: Frame) -> Frame:
        return Frame.full(frame.height, frame.width, self.color)


class DelayStyleStub:
    """Wraps a style stub and sleeps before answering.

    `delay_ms` may be a number or a zero-argument callable (for randomized
    per-frame delays).
    """

    def __init__(self, inner, delay_ms: float | Callable[[], float]):
        self.inner = inner
        self.delay_ms = delay_ms

    def stylize(self, frame: Frame) -> Frame:
        ms = self.delay_ms() if callable(self.delay_ms) else self.delay_ms
        time.sleep(ms / 1000.0)
        return self.inner.stylize(frame)


class FullFrameSegStub:
    """Predicts one class for every pixel."""

    def __init__(self, class_id: int, num_classes: int, class_names: Sequence[str] | None = None):
        if not 0 <= class_id < num_classes:
            raise ValueError(f"class id {class_id} out of range for {num_classes} classes")
        self.class_id = class_id
        self.num_classes = num_classes
        self.class_names = list(class_names) if class_names else [
            f"class{i}" for i in range(num_classes)
        ]

    def predict(self, frame: Frame) -> np.ndarray:
        probs = np.zeros((frame.height, frame.width, self.num_classes), dtype=np.float64)
        probs[:, :, self.class_id] = 1.0
        return probs


class FixedSegStub:
    """Predicts a fixed label map (must match the frame size)."""

    def __init__(self, labels: LabelMap, class_names: Sequence[str] | None = None):
        self.labels = labels
        self.class_names = list(class_names) if class_names else [
            f"class{i}" for i in range(labels.num_classes)
        ]

    def predict(self, frame: Frame) -> np.ndarray:
        if self.labels.one_hot.shape[:2] != (frame.height, frame.width):
            raise ValueError(
                f"fixed labels are {self.labels.one_hot.shape[:2]}, frame is "
                f"{(frame.height, frame.width)}"
            )
        return self.labels.one_hot.astype(np.float64)


class DelaySegStub:
    """Wraps a segmentation stub and sleeps before answering."""

    def __init__(self, inner, delay_ms: float | Callable[[], float]):
        self.inner = inner
        self.delay_ms = delay_ms
        self.class_names = getattr(inner, "class_names", None)

    def predict(self, frame: Frame) -> np.ndarray:
        ms = self.delay_ms() if callable(self.delay_ms) else self.delay_ms
        time.sleep(ms / 1000.0)
        return self.inner.predict(frame)
