"""Frames, class masks, and per-class compositing.

Frames are HxWx3 float64 arrays with values in [0, 1]; 8-bit conversion
happens only at the PNG boundary (round half up). Binary-mask compositing
is implemented as pixel selection, so where a mask is 0 the output is the
input frame bit-for-bit, and where it is 1 it is the styled frame
bit-for-bit. Soft masks (produced by feathering) interpolate linearly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence, Union

import numpy as np
from PIL import Image


@dataclass(frozen=True, eq=False)
class Frame:
    """An immutable HxWx3 image with float64 values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"frame pixels must have shape (H, W, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame must be at least 1x1, got {px.shape[:2]}")
        if px.dtype != np.float64 or px.flags.writeable or not px.flags.c_contiguous:
            px = np.ascontiguousarray(px, dtype=np.float64).copy()
        if not np.isfinite(px).all():
            raise ValueError("frame pixels must be finite")
        if (px < 0.0).any() or (px > 1.0).any():
            raise ValueError("frame pixels must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @staticmethod
    def full(height: int, width: int, color: Sequence[float]) -> "Frame":
        """Solid-color frame."""
        px = np.empty((height, width, 3), dtype=np.float64)
        px[:] = np.asarray(color, dtype=np.float64)
        return Frame(px)

    def content_hash(self) -> str:
        """SHA-256 of the 8-bit quantized pixels plus dimensions."""
        h = hashlib.sha256()
        h.update(f"{self.height}x{self.width}".encode())
        h.update(quantize_u8(self.pixels).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class ClassMask:
    """Binary per-class mask; entries are exactly 0 or 1."""

    class_id: int
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("class mask entries must be exactly 0 or 1")
        m = np.ascontiguousarray(m, dtype=np.uint8)
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Feathered mask with values in [0, 1]."""

    class_id: int
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {m.shape}")
        m = np.ascontiguousarray(m, dtype=np.float64)
        if not np.isfinite(m).all() or (m < 0.0).any() or (m > 1.0).any():
            raise ValueError("soft mask values must lie in [0, 1]")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)


AnyMask = Union[ClassMask, SoftMask]


@dataclass(frozen=True)
class StyleAssignment:
    """Live mapping from class id to the style that should cover it.

    Classes absent from the mapping stay unstyled.
    """

    entries: Mapping[int, str]

    def __post_init__(self):
        entries = dict(self.entries)
        for class_id, style_id in entries.items():
            if not isinstance(class_id, int) or isinstance(class_id, bool):
                raise ValueError(f"class id must be an int, got {class_id!r}")
            if not isinstance(style_id, str) or not style_id:
                raise ValueError(f"style id must be a non-empty string, got {style_id!r}")
        object.__setattr__(self, "entries", entries)

    @staticmethod
    def empty() -> "StyleAssignment":
        return StyleAssignment({})

    def style_ids(self) -> list[str]:
        """Distinct style ids, in sorted order."""
        return sorted(set(self.entries.values()))


def _check_same_size(frame: Frame, other: Frame, what: str) -> None:
    if (frame.height, frame.width) != (other.height, other.width):
        raise ValueError(
            f"{what} is {other.height}x{other.width}, expected "
            f"{frame.height}x{frame.width}"
        )


def _check_mask_size(frame: Frame, mask: AnyMask) -> None:
    if mask.mask.shape != (frame.height, frame.width):
        raise ValueError(
            f"mask for class {mask.class_id} is {mask.mask.shape}, expected "
            f"({frame.height}, {frame.width})"
        )


def composite_single(frame: Frame, styled: Frame, mask: AnyMask) -> Frame:
    """Paste `styled` over `frame` where the mask is set.

    Binary masks select pixels exactly; soft masks blend linearly.
    """
    _check_same_size(frame, styled, "styled frame")
    _check_mask_size(frame, mask)
    if isinstance(mask, ClassMask):
        sel = mask.mask.astype(bool)[:, :, None]
        out = np.where(sel, styled.pixels, frame.pixels)
    else:
        m = mask.mask[:, :, None]
        out = np.clip(m * styled.pixels + (1.0 - m) * frame.pixels, 0.0, 1.0)
    return Frame(out)


def composite_multi(
    frame: Frame,
    styled: Mapping[str, Frame],
    masks: Sequence[AnyMask],
    assignment: StyleAssignment,
) -> Frame:
    """Composite one styled frame per assigned class onto `frame`.

    Masks must be pairwise disjoint (argmax segmentation guarantees this
    before feathering; feathering preserves it because the box filter is
    linear). The result is independent of mask order.
    """
    by_class: dict[int, AnyMask] = {}
    for mask in masks:
        if mask.class_id in by_class:
            raise ValueError(f"duplicate mask for class {mask.class_id}")
        _check_mask_size(frame, mask)
        by_class[mask.class_id] = mask

    used: list[tuple[AnyMask, Frame]] = []
    for class_id in sorted(assignment.entries):
        style_id = assignment.entries[class_id]
        if class_id not in by_class:
            raise ValueError(f"no mask provided for assigned class {class_id}")
        if style_id not in styled:
            raise ValueError(
                f"no styled frame for style {style_id!r} (assigned to class {class_id})"
            )
        styled_frame = styled[style_id]
        _check_same_size(frame, styled_frame, f"styled frame {style_id!r}")
        used.append((by_class[class_id], styled_frame))

    if not used:
        return frame

    total = np.zeros((frame.height, frame.width), dtype=np.float64)
    for mask, _ in used:
        total += mask.mask
    if (total > 1.0 + 1e-9).any():
        raise ValueError("masks overlap; per-class masks must be disjoint")

    if all(isinstance(mask, ClassMask) for mask, _ in used):
        out = np.array(frame.pixels)
        for mask, styled_frame in used:
            sel = mask.mask.astype(bool)
            out[sel] = styled_frame.pixels[sel]
        return Frame(out)

    acc = (1.0 - total)[:, :, None] * frame.pixels
    for mask, styled_frame in used:
        acc += mask.mask.astype(np.float64)[:, :, None] * styled_frame.pixels
    return Frame(np.clip(acc, 0.0, 1.0))


def _box_mean_1d(values: np.ndarray, radius: int, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(values, pad, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, 2 * radius + 1, axis=axis)
    return windows.mean(axis=-1)


def feather_mask(mask: ClassMask, radius: int) -> SoftMask:
    """Soften mask edges with a normalized box filter (replicate padding)."""
    if radius < 0:
        raise ValueError(f"feather radius must be >= 0, got {radius}")
    values = mask.mask.astype(np.float64)
    if radius > 0:
        values = _box_mean_1d(values, radius, axis=0)
        values = _box_mean_1d(values, radius, axis=1)
        values = np.clip(values, 0.0, 1.0)
    return SoftMask(mask.class_id, values)


def quantize_u8(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to 8-bit, rounding half up."""
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def u8_to_float(values: np.ndarray) -> np.ndarray:
    return values.astype(np.float64) / 255.0


def save_frame_png(frame: Frame, path: Path | str) -> None:
    Image.fromarray(quantize_u8(frame.pixels), mode="RGB").save(path, format="PNG")


def load_frame_png(path: Path | str) -> Frame:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return Frame(u8_to_float(arr))


def frame_png_bytes(frame: Frame) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(quantize_u8(frame.pixels), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_mask_png(mask: ClassMask, path: Path | str) -> None:
    Image.fromarray(mask.mask * np.uint8(255), mode="L").save(path, format="PNG")


def load_mask_png(path: Path | str, class_id: int) -> ClassMask:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return ClassMask(class_id, (arr >= 128).astype(np.uint8))
