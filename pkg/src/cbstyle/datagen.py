"""Synthetic shapes dataset: desk-scale training data for both networks.

Every sample is fully determined by (seed, sample_id, size), so samples can
be generated in any order or in parallel without changing the output.
Images are quantized to the 8-bit grid before they leave the generator,
which makes the PNG round-trip exact by construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .image import Frame, load_frame_png, quantize_u8, save_frame_png
from .segmenter import LabelMap

CLASS_NAMES = ("background", "circle", "square", "triangle")
MIN_SIZE = 32
NOISE_AMPLITUDE = 0.02

# Per-class base colors; shapes jitter around them so segmentation has a
# learnable cue while boundaries still depend on geometry.
_BASE_COLORS = {
    "circle": (0.85, 0.25, 0.25),
    "square": (0.25, 0.75, 0.30),
    "triangle": (0.25, 0.35, 0.85),
}
_COLOR_JITTER = 0.08
_MAX_PLACEMENT_TRIES = 40


@dataclass(frozen=True)
class ShapeSpec:
    """Parameters of one rendered shape, kept so tests can replay it."""

    kind: str
    cx: int
    cy: int
    size: int
    color: tuple[float, float, float]


@dataclass(eq=False)
class SyntheticSample:
    image: Frame
    labels: LabelMap
    sample_id: int
    seed: int
    shapes: tuple[ShapeSpec, ...]


def shape_mask(spec: ShapeSpec, height: int, width: int) -> np.ndarray:
    """Boolean interior mask of one shape on pixel centers."""
    yy, xx = np.mgrid[0:height, 0:width]
    if spec.kind == "circle":
        return (xx - spec.cx) ** 2 + (yy - spec.cy) ** 2 <= spec.size**2
    if spec.kind == "square":
        return (np.abs(xx - spec.cx) <= spec.size) & (np.abs(yy - spec.cy) <= spec.size)
    if spec.kind == "triangle":
        # upward triangle: apex (cx, cy-s), base corners (cx +/- s, cy+s)
        ax, ay = spec.cx, spec.cy - spec.size
        bx, by = spec.cx - spec.size, spec.cy + spec.size
        cx_, cy_ = spec.cx + spec.size, spec.cy + spec.size

        def edge(px, py, qx, qy):
            return (qx - px) * (yy - py) - (qy - py) * (xx - px)

        d1 = edge(ax, ay, bx, by)
        d2 = edge(bx, by, cx_, cy_)
        d3 = edge(cx_, cy_, ax, ay)
        has_neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
        has_pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
        return ~(has_neg & has_pos)
    raise ValueError(f"unknown shape kind {spec.kind!r}")


def _sample_shape(rng: np.random.Generator, size: int) -> ShapeSpec:
    kind = CLASS_NAMES[int(rng.integers(1, len(CLASS_NAMES)))]
    s = int(rng.integers(max(3, size // 10), max(4, size // 5)))
    cx = int(rng.integers(s + 1, size - s - 1))
    cy = int(rng.integers(s + 1, size - s - 1))
    base = _BASE_COLORS[kind]
    color = tuple(
        float(np.clip(b + rng.uniform(-_COLOR_JITTER, _COLOR_JITTER), 0.05, 0.95))
        for b in base
    )
    return ShapeSpec(kind=kind, cx=cx, cy=cy, size=s, color=color)


def generate_sample(sample_id: int, seed: int, size: int) -> SyntheticSample:
    """Render one image with 1-3 non-overlapping shapes plus noise."""
    if size < MIN_SIZE:
        raise ValueError(f"size must be >= {MIN_SIZE}, got {size}")
    rng = np.random.default_rng([seed, sample_id])

    gray = rng.uniform(0.35, 0.65)
    background = np.clip(gray + rng.uniform(-0.05, 0.05, 3), 0.0, 1.0)
    pixels = np.empty((size, size, 3), dtype=np.float64)
    pixels[:] = background
    class_idx = np.zeros((size, size), dtype=np.int64)

    n_shapes = int(rng.integers(1, 4))
    occupied = np.zeros((size, size), dtype=bool)
    shapes: list[ShapeSpec] = []
    for _ in range(n_shapes):
        for _ in range(_MAX_PLACEMENT_TRIES):
            spec = _sample_shape(rng, size)
            mask = shape_mask(spec, size, size)
            if not (mask & occupied).any():
                occupied |= mask
                pixels[mask] = spec.color
                class_idx[mask] = CLASS_NAMES.index(spec.kind)
                shapes.append(spec)
                break

    pixels += rng.uniform(-NOISE_AMPLITUDE, NOISE_AMPLITUDE, pixels.shape)
    pixels = quantize_u8(np.clip(pixels, 0.0, 1.0)) / 255.0

    return SyntheticSample(
        image=Frame(pixels),
        labels=LabelMap.from_class_indices(class_idx, len(CLASS_NAMES)),
        sample_id=sample_id,
        seed=seed,
        shapes=tuple(shapes),
    )


def generate_dataset(n: int, seed: int, size: int) -> list[SyntheticSample]:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [generate_sample(i, seed, size) for i in range(n)]


def save_dataset(samples: list[SyntheticSample], path: Path | str, seed: int, size: int) -> None:
    """Write images/, labels/ and index.json under `path`."""
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    (path / "labels").mkdir(parents=True, exist_ok=True)
    index = {
        "schema": 1,
        "n": len(samples),
        "seed": seed,
        "size": size,
        "class_names": list(CLASS_NAMES),
        "samples": [],
    }
    for sample in samples:
        name = f"{sample.sample_id:05d}.png"
        save_frame_png(sample.image, path / "images" / name)
        Image.fromarray(
            sample.labels.class_indices().astype(np.uint8), mode="L"
        ).save(path / "labels" / name, format="PNG")
        index["samples"].append(
            {
                "id": sample.sample_id,
                "seed": sample.seed,
                "shapes": [
                    {
                        "kind": s.kind,
                        "cx": s.cx,
                        "cy": s.cy,
                        "size": s.size,
                        "color": list(s.color),
                    }
                    for s in sample.shapes
                ],
            }
        )
    (path / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_dataset(path: Path | str) -> list[SyntheticSample]:
    path = Path(path)
    index_path = path / "index.json"
    if not index_path.is_file():
        raise FileNotFoundError(f"dataset index not found: {index_path}")
    try:
        index = json.loads(index_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"corrupt dataset index {index_path}: {e}") from e
    if index.get("schema") != 1:
        raise ValueError(f"unsupported dataset schema in {index_path}: {index.get('schema')}")

    num_classes = len(index["class_names"])
    samples = []
    for entry in index["samples"]:
        name = f"{entry['id']:05d}.png"
        image = load_frame_png(path / "images" / name)
        with Image.open(path / "labels" / name) as img:
            class_idx = np.asarray(img.convert("L")).astype(np.int64)
        samples.append(
            SyntheticSample(
                image=image,
                labels=LabelMap.from_class_indices(class_idx, num_classes),
                sample_id=entry["id"],
                seed=entry["seed"],
                shapes=tuple(
                    ShapeSpec(
                        kind=s["kind"],
                        cx=s["cx"],
                        cy=s["cy"],
                        size=s["size"],
                        color=tuple(s["color"]),
                    )
                    for s in entry["shapes"]
                ),
            )
        )
    if len(samples) != index["n"]:
        raise ValueError(
            f"dataset index {index_path} lists {index['n']} samples, found {len(samples)}"
        )
    return samples
