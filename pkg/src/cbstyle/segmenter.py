"""Lightweight semantic segmentation.

The network keeps inference cheap the same way the fast-segmentation
literature does: each block runs a depthwise-separable convolution in
parallel with a dilated depthwise convolution, concatenates the two, and
fuses them pointwise, so local and contextual features come out of one
shallow stack. A stride-2 stem halves the resolution and the logits are
upsampled bilinearly back to the input size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .image import ClassMask, Frame
from .styler import TrainingDivergedError, frame_to_tensor, _seeded_conv_init

PROB_EPS = 1e-12  # clamp inside log; far below every test tolerance
PARAM_BUDGET = 760_000

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.pt"
MANIFEST_SCHEMA = 1


@dataclass(frozen=True, eq=False)
class LabelMap:
    """One-hot ground truth: (H, W, C) with exactly one 1 per pixel."""

    one_hot: np.ndarray

    def __post_init__(self):
        oh = np.asarray(self.one_hot)
        if oh.ndim != 3:
            raise ValueError(f"label map must be (H, W, C), got {oh.shape}")
        if not np.isin(oh, (0, 1)).all():
            raise ValueError("label map entries must be 0 or 1")
        if not (oh.sum(axis=2) == 1).all():
            raise ValueError("each pixel must have exactly one class")
        oh = np.ascontiguousarray(oh, dtype=np.uint8)
        oh.setflags(write=False)
        object.__setattr__(self, "one_hot", oh)

    @property
    def num_classes(self) -> int:
        return self.one_hot.shape[2]

    def class_indices(self) -> np.ndarray:
        return self.one_hot.argmax(axis=2).astype(np.int64)

    @staticmethod
    def from_class_indices(indices: np.ndarray, num_classes: int) -> "LabelMap":
        indices = np.asarray(indices)
        if indices.min() < 0 or indices.max() >= num_classes:
            raise ValueError(
                f"class indices must lie in [0, {num_classes}), "
                f"got range [{indices.min()}, {indices.max()}]"
            )
        one_hot = np.zeros((*indices.shape, num_classes), dtype=np.uint8)
        np.put_along_axis(one_hot, indices[:, :, None], 1, axis=2)
        return LabelMap(one_hot)


def cross_entropy(pred, gt) -> float | torch.Tensor:
    """Sum over pixels of -log(predicted probability of the true class).

    Accepts (H, W, C) numpy arrays (returns a float) or torch tensors
    (returns a tensor, so gradients flow through soft predictions).
    Predictions are clamped at PROB_EPS inside the log.
    """
    gt_arr = gt.one_hot if isinstance(gt, LabelMap) else gt
    if tuple(pred.shape) != tuple(gt_arr.shape):
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs gt {tuple(gt_arr.shape)}")
    if isinstance(pred, torch.Tensor):
        gt_t = torch.from_numpy(np.array(gt_arr)).to(pred.dtype)
        return -(gt_t * torch.log(pred.clamp_min(PROB_EPS))).sum()
    pred = np.asarray(pred, dtype=np.float64)
    return float(-(np.asarray(gt_arr) * np.log(np.maximum(pred, PROB_EPS))).sum())


class _DabBlock(nn.Module):
    """Depthwise-separable branch alongside a dilated depthwise branch,
    concatenated and fused pointwise, with a residual skip."""

    def __init__(self, channels: int, dilation: int):
        super().__init__()
        self.dw_local = nn.Conv2d(channels, channels, 3, padding=1, groups=channels)
        self.pw_local = nn.Conv2d(channels, channels, 1)
        self.dw_dilated = nn.Conv2d(
            channels, channels, 3, padding=dilation, dilation=dilation, groups=channels
        )
        self.fuse = nn.Conv2d(2 * channels, channels, 1)

    def convs(self) -> list[nn.Conv2d]:
        return [self.dw_local, self.pw_local, self.dw_dilated, self.fuse]

    def forward(self, x):
        local = F.relu(self.pw_local(self.dw_local(x)))
        context = F.relu(self.dw_dilated(x))
        return F.relu(x + self.fuse(torch.cat([local, context], dim=1)))


class SegNet(nn.Module):
    """Stride-2 stem, stacked dual-branch blocks, pointwise classifier,
    bilinear upsampling back to the input resolution."""

    def __init__(
        self,
        num_classes: int,
        width: int = 32,
        dilations: Sequence[int] = (2, 4, 8),
        seed: int = 0,
    ):
        super().__init__()
        self.num_classes = int(num_classes)
        self.width = int(width)
        self.dilations = tuple(int(d) for d in dilations)
        self.seed = int(seed)
        self.stem = nn.Conv2d(3, self.width, 3, stride=2, padding=1)
        self.blocks = nn.ModuleList(_DabBlock(self.width, d) for d in self.dilations)
        self.head = nn.Conv2d(self.width, self.num_classes, 1)
        convs = [self.stem] + [c for b in self.blocks for c in b.convs()] + [self.head]
        _seeded_conv_init(convs, self.seed)
        n_params = sum(p.numel() for p in self.parameters())
        if n_params >= PARAM_BUDGET:
            raise ValueError(f"network has {n_params} parameters, budget is {PARAM_BUDGET}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(N, 3, H, W) -> (N, C, H, W) logits at input resolution."""
        size = x.shape[-2:]
        h = F.relu(self.stem(x))
        for block in self.blocks:
            h = block(h)
        logits = self.head(h)
        return F.interpolate(logits, size=size, mode="bilinear", align_corners=False)

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class SegTrainConfig:
    steps: int = 500
    step_size: float = 0.01
    batch_size: int = 8
    seed: int = 0
    width: int = 32
    dilations: tuple[int, ...] = (2, 4, 8)


@dataclass
class SegTrainingMeta:
    steps: int
    seed: int
    final_loss: float  # mean per-pixel cross-entropy over the last batch pass


@dataclass
class SegModel:
    """Trained segmentation network plus its ordered class list."""

    net: SegNet
    class_names: list[str]
    config: SegTrainConfig
    meta: SegTrainingMeta

    def predict(self, frame: Frame) -> np.ndarray:
        """Per-pixel class probabilities: (H, W, C), rows summing to 1."""
        with torch.no_grad():
            logits = self.net(frame_to_tensor(frame).unsqueeze(0))
            probs = torch.softmax(logits, dim=1).squeeze(0)
        return probs.to(torch.float64).numpy().transpose(1, 2, 0)


def predict(frame: Frame, model) -> np.ndarray:
    """Probability map for one frame; `model` exposes .predict()."""
    return model.predict(frame)


def extract_mask(probs: np.ndarray, class_id: int) -> ClassMask:
    """Binary mask where the argmax class equals `class_id`.

    Ties go to the lowest class index.
    """
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ValueError(f"probability map must be (H, W, C), got {probs.shape}")
    num_classes = probs.shape[2]
    if not 0 <= class_id < num_classes:
        raise ValueError(f"unknown class id {class_id}, map has {num_classes} classes")
    winners = probs.argmax(axis=2)  # argmax returns the first (lowest) index on ties
    return ClassMask(class_id, (winners == class_id).astype(np.uint8))


def mean_iou(preds: Sequence[np.ndarray], gts: Sequence[LabelMap]) -> float:
    """Mean over ground-truth-present classes of intersection over union,
    aggregated across the whole list, from argmax predictions."""
    if not preds or len(preds) != len(gts):
        raise ValueError(f"need matching non-empty lists, got {len(preds)} and {len(gts)}")
    num_classes = gts[0].num_classes
    intersection = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    gt_present = np.zeros(num_classes, dtype=bool)
    for probs, gt in zip(preds, gts):
        if probs.shape != gt.one_hot.shape:
            raise ValueError(f"shape mismatch: {probs.shape} vs {gt.one_hot.shape}")
        pred_idx = np.asarray(probs).argmax(axis=2)
        gt_idx = gt.class_indices()
        for c in range(num_classes):
            p = pred_idx == c
            g = gt_idx == c
            intersection[c] += np.count_nonzero(p & g)
            union[c] += np.count_nonzero(p | g)
            gt_present[c] |= g.any()
    if not gt_present.any():
        raise ValueError("ground truth contains no classes")
    ious = [intersection[c] / union[c] for c in range(num_classes) if gt_present[c]]
    return float(np.mean(ious))


def train_seg(
    dataset: Sequence[tuple[Frame, LabelMap]],
    config: SegTrainConfig,
    class_names: Sequence[str],
) -> SegModel:
    """Train the segmentation network on (frame, one-hot labels) pairs."""
    if not dataset:
        raise ValueError("dataset must be non-empty")
    num_classes = len(class_names)
    for i, (_, labels) in enumerate(dataset):
        if labels.num_classes != num_classes:
            raise ValueError(
                f"sample {i} has {labels.num_classes} classes, expected {num_classes}"
            )

    net = SegNet(num_classes, width=config.width, dilations=config.dilations, seed=config.seed)
    images = torch.stack([frame_to_tensor(f) for f, _ in dataset])
    targets = torch.stack(
        [torch.from_numpy(l.class_indices()) for _, l in dataset]
    )
    optimizer = torch.optim.Adam(net.parameters(), lr=config.step_size)
    sampler = torch.Generator().manual_seed(config.seed)

    final_loss = math.nan
    for step in range(config.steps):
        if len(dataset) <= config.batch_size:
            batch, labels = images, targets
        else:
            idx = torch.randint(len(dataset), (config.batch_size,), generator=sampler)
            batch, labels = images[idx], targets[idx]
        optimizer.zero_grad()
        logits = net(batch)
        loss = F.cross_entropy(logits, labels)  # mean per-pixel cross-entropy
        if not torch.isfinite(loss):
            raise TrainingDivergedError(step, loss.item())
        loss.backward()
        optimizer.step()
        final_loss = loss.item()

    meta = SegTrainingMeta(steps=config.steps, seed=config.seed, final_loss=final_loss)
    return SegModel(net=net, class_names=list(class_names), config=config, meta=meta)


def save_seg_model(model: SegModel, path: Path | str) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "kind": "seg",
        "class_names": model.class_names,
        "width": model.config.width,
        "dilations": list(model.config.dilations),
        "seed": model.meta.seed,
        "steps": model.meta.steps,
        "step_size": model.config.step_size,
        "batch_size": model.config.batch_size,
        "final_loss": None if math.isnan(model.meta.final_loss) else model.meta.final_loss,
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    torch.save({"net": model.net.state_dict()}, path / WEIGHTS_NAME)


def load_seg_model(path: Path | str) -> SegModel:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"segmentation model manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"corrupt segmentation model manifest {manifest_path}: {e}") from e
    if manifest.get("schema") != MANIFEST_SCHEMA or manifest.get("kind") != "seg":
        raise ValueError(
            f"unsupported segmentation manifest {manifest_path}: {manifest.get('schema')}"
        )
    config = SegTrainConfig(
        steps=manifest["steps"],
        step_size=manifest["step_size"],
        batch_size=manifest["batch_size"],
        seed=manifest["seed"],
        width=manifest["width"],
        dilations=tuple(manifest["dilations"]),
    )
    net = SegNet(
        len(manifest["class_names"]),
        width=config.width,
        dilations=config.dilations,
        seed=config.seed,
    )
    payload = torch.load(path / WEIGHTS_NAME, weights_only=True)
    net.load_state_dict(payload["net"])
    final = manifest["final_loss"]
    meta = SegTrainingMeta(
        steps=manifest["steps"],
        seed=manifest["seed"],
        final_loss=math.nan if final is None else final,
    )
    return SegModel(net=net, class_names=list(manifest["class_names"]), config=config, meta=meta)
