"""Fast feed-forward styling.

A fixed, seed-initialized convolutional pyramid stands in for a pretrained
feature extractor (same interface, so a pretrained one can be dropped in).
The transform network is trained against a perceptual loss: a feature-space
content term on the level-2 maps plus a Gram-matrix style term summed over
all levels. Inference is a single forward pass per frame.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .image import Frame

DEFAULT_LEVEL_CHANNELS = (8, 16, 32, 64)
CONTENT_LEVEL = 2  # 1-based level whose features carry the content term

MANIFEST_NAME = "manifest.json"
WEIGHTS_NAME = "weights.pt"
MANIFEST_SCHEMA = 1


class TrainingDivergedError(RuntimeError):
    """Raised when a training loss becomes non-finite."""

    def __init__(self, iteration: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at iteration {iteration}")
        self.iteration = iteration


def frame_to_tensor(frame: Frame, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Frame -> (3, H, W) tensor."""
    return torch.from_numpy(frame.pixels.transpose(2, 0, 1).copy()).to(dtype)


def tensor_to_frame(tensor: torch.Tensor) -> Frame:
    """(3, H, W) tensor -> Frame, clamped to [0, 1]."""
    arr = tensor.detach().clamp(0.0, 1.0).to(torch.float64).numpy()
    return Frame(arr.transpose(1, 2, 0))


def _seeded_conv_init(convs: Sequence[nn.Conv2d], seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in convs:
            fan_in = (conv.in_channels // conv.groups) * conv.kernel_size[0] * conv.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            conv.weight.normal_(0.0, std, generator=gen)
            if conv.bias is not None:
                conv.bias.zero_()


class FeatureExtractor(nn.Module):
    """Fixed convolutional pyramid used by both loss terms.

    Level 1 keeps the input resolution; every later level halves it, so a
    64x64 input yields maps of size 64, 32, 16 and 8. Weights are frozen
    and fully determined by the seed.
    """

    def __init__(
        self,
        level_channels: Sequence[int] = DEFAULT_LEVEL_CHANNELS,
        seed: int = 0,
    ):
        super().__init__()
        if len(level_channels) < 1:
            raise ValueError("extractor needs at least one level")
        self.level_channels = tuple(int(c) for c in level_channels)
        self.seed = int(seed)
        convs = []
        in_ch = 3
        for i, out_ch in enumerate(self.level_channels):
            stride = 1 if i == 0 else 2
            convs.append(nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False))
            in_ch = out_ch
        self.convs = nn.ModuleList(convs)
        _seeded_conv_init(convs, self.seed)
        self.requires_grad_(False)
        self.eval()

    @property
    def levels(self) -> int:
        return len(self.convs)

    @property
    def min_input_size(self) -> int:
        return 2 ** (self.levels - 1)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        """(N, 3, H, W) -> per-level feature maps, coarsest last."""
        if min(x.shape[-2:]) < self.min_input_size:
            raise ValueError(
                f"input {tuple(x.shape[-2:])} below the extractor's minimum "
                f"footprint of {self.min_input_size}"
            )
        maps = []
        h = x
        for conv in self.convs:
            h = F.relu(conv(h))
            maps.append(h)
        return maps


def extract_features(frame: Frame, extractor: FeatureExtractor) -> list[torch.Tensor]:
    """Per-level (C_l, H_l, W_l) feature maps for one frame."""
    dtype = next(extractor.parameters()).dtype
    with torch.no_grad():
        maps = extractor(frame_to_tensor(frame, dtype).unsqueeze(0))
    return [m.squeeze(0) for m in maps]


def gram(feature_map: torch.Tensor) -> torch.Tensor:
    """Channel co-activation matrix: (C, H, W) -> (C, C), normalized by H*W."""
    if feature_map.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got {tuple(feature_map.shape)}")
    c, h, w = feature_map.shape
    flat = feature_map.reshape(c, h * w)
    return flat @ flat.T / (h * w)


def _gram_batch(feature_maps: torch.Tensor) -> torch.Tensor:
    n, c, h, w = feature_maps.shape
    flat = feature_maps.reshape(n, c, h * w)
    return torch.bmm(flat, flat.transpose(1, 2)) / (h * w)


def content_loss(generated: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
    """Size-normalized squared feature distance between two maps."""
    if generated.shape != reference.shape:
        raise ValueError(
            f"feature shapes differ: {tuple(generated.shape)} vs {tuple(reference.shape)}"
        )
    return F.mse_loss(generated, reference)


def style_loss(pyramid: Sequence[torch.Tensor], style_grams: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over levels of the channel-normalized squared Gram distance."""
    if len(pyramid) != len(style_grams):
        raise ValueError(f"level counts differ: {len(pyramid)} maps vs {len(style_grams)} grams")
    total = None
    for feature_map, target in zip(pyramid, style_grams):
        c = feature_map.shape[0]
        if target.shape != (c, c):
            raise ValueError(
                f"gram shape {tuple(target.shape)} does not match {c} channels"
            )
        term = ((gram(feature_map) - target) ** 2).sum() / c
        total = term if total is None else total + term
    return total


@dataclass(frozen=True)
class LossBreakdown:
    """Content/style terms with the weights that produced the total."""

    content: float
    style: float
    total: float
    content_weight: float
    style_weight: float

    @staticmethod
    def make(content: float, style: float, content_weight: float, style_weight: float) -> "LossBreakdown":
        return LossBreakdown(
            content=float(content),
            style=float(style),
            total=float(content_weight * content + style_weight * style),
            content_weight=float(content_weight),
            style_weight=float(style_weight),
        )

    def to_dict(self) -> dict:
        return {
            "content": self.content,
            "style": self.style,
            "total": self.total,
            "content_weight": self.content_weight,
            "style_weight": self.style_weight,
        }

    @staticmethod
    def from_dict(d: dict) -> "LossBreakdown":
        return LossBreakdown(
            content=d["content"],
            style=d["style"],
            total=d["total"],
            content_weight=d["content_weight"],
            style_weight=d["style_weight"],
        )


def perceptual_loss(
    frame: Frame,
    candidate: Frame,
    style_grams: Sequence[torch.Tensor],
    extractor: FeatureExtractor,
    content_weight: float = 1.0,
    style_weight: float = 10.0,
) -> LossBreakdown:
    """Loss of `candidate` as a styled version of `frame`."""
    if (frame.height, frame.width) != (candidate.height, candidate.width):
        raise ValueError("candidate must match the input frame size")
    pyr_in = extract_features(frame, extractor)
    pyr_out = extract_features(candidate, extractor)
    content = content_loss(pyr_out[CONTENT_LEVEL - 1], pyr_in[CONTENT_LEVEL - 1])
    style = style_loss(pyr_out, style_grams)
    return LossBreakdown.make(content.item(), style.item(), content_weight, style_weight)


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class TransformNet(nn.Module):
    """Residual fully-convolutional styler: downsample x2, two residual
    blocks, upsample x2, sigmoid output. Output matches the input size.
    """

    def __init__(self, width: int = 8, seed: int = 0):
        super().__init__()
        self.width = int(width)
        self.seed = int(seed)
        w = self.width
        self.head = nn.Conv2d(3, w, 3, padding=1)
        self.down = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.res1 = _ResidualBlock(2 * w)
        self.res2 = _ResidualBlock(2 * w)
        self.up = nn.Conv2d(2 * w, w, 3, padding=1)
        self.out = nn.Conv2d(w, 3, 3, padding=1)
        _seeded_conv_init(
            [
                self.head,
                self.down,
                self.res1.conv1,
                self.res1.conv2,
                self.res2.conv1,
                self.res2.conv2,
                self.up,
                self.out,
            ],
            self.seed,
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        h = F.relu(self.head(x))
        h = F.relu(self.down(h))
        h = self.res2(self.res1(h))
        h = F.interpolate(h, size=size, mode="nearest")
        h = F.relu(self.up(h))
        return torch.sigmoid(self.out(h))


@dataclass
class StyleTrainConfig:
    iterations: int = 200
    step_size: float = 0.02
    content_weight: float = 1.0
    style_weight: float = 10.0
    seed: int = 0
    width: int = 8
    batch_size: int = 16
    level_channels: tuple[int, ...] = DEFAULT_LEVEL_CHANNELS
    extractor_seed: int = 0


@dataclass
class StyleTrainingMeta:
    iterations: int
    seed: int
    initial_loss: LossBreakdown
    final_loss: LossBreakdown


@dataclass
class StyleModel:
    """Trained transform network plus the style targets it was fit to."""

    transform: TransformNet
    style_grams: list[torch.Tensor]
    style_image_hash: str
    config: StyleTrainConfig
    meta: StyleTrainingMeta

    def stylize(self, frame: Frame) -> Frame:
        with torch.no_grad():
            out = self.transform(frame_to_tensor(frame).unsqueeze(0)).squeeze(0)
        return tensor_to_frame(out)


def stylize(frame: Frame, model) -> Frame:
    """Single forward pass; `model` is anything exposing .stylize()."""
    return model.stylize(frame)


def _batched_loss(
    net: TransformNet,
    batch: torch.Tensor,
    reference_content: torch.Tensor,
    style_grams: Sequence[torch.Tensor],
    extractor: FeatureExtractor,
    content_weight: float,
    style_weight: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Mean content/style/total loss over one batch of content frames."""
    out = net(batch)
    pyramid = extractor(out)
    content = F.mse_loss(pyramid[CONTENT_LEVEL - 1], reference_content)
    style = None
    for maps, target in zip(pyramid, style_grams):
        c = maps.shape[1]
        term = ((_gram_batch(maps) - target.unsqueeze(0)) ** 2).sum(dim=(1, 2)).mean() / c
        style = term if style is None else style + term
    total = content_weight * content + style_weight * style
    return content, style, total


def train_style(style: Frame, content: Sequence[Frame], config: StyleTrainConfig) -> StyleModel:
    """Fit a transform network to restyle arbitrary content like `style`."""
    if not content:
        raise ValueError("content set must be non-empty")
    sizes = {(f.height, f.width) for f in content}
    if len(sizes) != 1:
        raise ValueError(f"content frames must share one size, got {sorted(sizes)}")

    extractor = FeatureExtractor(config.level_channels, seed=config.extractor_seed)
    style_grams = [gram(m) for m in extract_features(style, extractor)]
    net = TransformNet(width=config.width, seed=config.seed)

    frames = torch.stack([frame_to_tensor(f) for f in content])
    with torch.no_grad():
        all_content_ref = extractor(frames)[CONTENT_LEVEL - 1]

    def full_set_loss() -> LossBreakdown:
        with torch.no_grad():
            c, s, _ = _batched_loss(
                net, frames, all_content_ref, style_grams, extractor,
                config.content_weight, config.style_weight,
            )
        return LossBreakdown.make(c.item(), s.item(), config.content_weight, config.style_weight)

    initial = full_set_loss()
    optimizer = torch.optim.Adam(net.parameters(), lr=config.step_size)
    sampler = torch.Generator().manual_seed(config.seed)

    for iteration in range(config.iterations):
        if len(content) <= config.batch_size:
            batch = frames
            reference = all_content_ref
        else:
            idx = torch.randint(len(content), (config.batch_size,), generator=sampler)
            batch = frames[idx]
            reference = all_content_ref[idx]
        optimizer.zero_grad()
        _, _, total = _batched_loss(
            net, batch, reference, style_grams, extractor,
            config.content_weight, config.style_weight,
        )
        if not torch.isfinite(total):
            raise TrainingDivergedError(iteration, total.item())
        total.backward()
        optimizer.step()

    final = full_set_loss() if config.iterations > 0 else initial
    meta = StyleTrainingMeta(
        iterations=config.iterations,
        seed=config.seed,
        initial_loss=initial,
        final_loss=final,
    )
    return StyleModel(
        transform=net,
        style_grams=style_grams,
        style_image_hash=style.content_hash(),
        config=config,
        meta=meta,
    )


def save_style_model(model: StyleModel, path: Path | str) -> None:
    """Write a checkpoint directory: torch weights plus a JSON manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "kind": "style",
        "levels": len(model.style_grams),
        "level_channels": list(model.config.level_channels),
        "extractor_seed": model.config.extractor_seed,
        "width": model.config.width,
        "seed": model.meta.seed,
        "iterations": model.meta.iterations,
        "step_size": model.config.step_size,
        "batch_size": model.config.batch_size,
        "content_weight": model.config.content_weight,
        "style_weight": model.config.style_weight,
        "style_image_hash": model.style_image_hash,
        "initial_loss": model.meta.initial_loss.to_dict(),
        "final_loss": model.meta.final_loss.to_dict(),
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    torch.save(
        {"transform": model.transform.state_dict(), "style_grams": model.style_grams},
        path / WEIGHTS_NAME,
    )


def load_style_model(path: Path | str) -> StyleModel:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"style model manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"corrupt style model manifest {manifest_path}: {e}") from e
    if manifest.get("schema") != MANIFEST_SCHEMA or manifest.get("kind") != "style":
        raise ValueError(f"unsupported style model manifest {manifest_path}: {manifest.get('schema')}")

    config = StyleTrainConfig(
        iterations=manifest["iterations"],
        step_size=manifest["step_size"],
        content_weight=manifest["content_weight"],
        style_weight=manifest["style_weight"],
        seed=manifest["seed"],
        width=manifest["width"],
        batch_size=manifest["batch_size"],
        level_channels=tuple(manifest["level_channels"]),
        extractor_seed=manifest["extractor_seed"],
    )
    payload = torch.load(path / WEIGHTS_NAME, weights_only=True)
    net = TransformNet(width=config.width, seed=config.seed)
    net.load_state_dict(payload["transform"])
    meta = StyleTrainingMeta(
        iterations=manifest["iterations"],
        seed=manifest["seed"],
        initial_loss=LossBreakdown.from_dict(manifest["initial_loss"]),
        final_loss=LossBreakdown.from_dict(manifest["final_loss"]),
    )
    return StyleModel(
        transform=net,
        style_grams=list(payload["style_grams"]),
        style_image_hash=manifest["style_image_hash"],
        config=config,
        meta=meta,
    )
