"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v` (add -rA to see the printed
lines for passing tests).
"""

import hashlib
import json
import math
import queue
import time
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import torch

from cbstyle.cli import main as cli_main
from cbstyle.datagen import CLASS_NAMES, generate_dataset
from cbstyle.image import ClassMask, Frame, StyleAssignment, composite_single
from cbstyle.pipeline import (
    PipelineConfig,
    StubDelays,
    StylingPipeline,
    benchmark,
    write_frame_dir,
)
from cbstyle.segmenter import (
    PARAM_BUDGET,
    LabelMap,
    SegTrainConfig,
    cross_entropy,
    mean_iou,
    train_seg,
)
from cbstyle.styler import (
    CONTENT_LEVEL,
    FeatureExtractor,
    StyleTrainConfig,
    TransformNet,
    _batched_loss,
    content_loss,
    extract_features,
    frame_to_tensor,
    gram,
    style_loss,
    train_style,
)
from cbstyle.stubs import ConstantStyleStub, DelaySegStub, DelayStyleStub, FullFrameSegStub
from conftest import random_frame


@contextmanager
def criterion(name: str, budget_s: float):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL ({time.perf_counter() - start:.1f}s)")
        raise
    elapsed = time.perf_counter() - start
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.1f}s)")
    assert elapsed < budget_s, f"{name} took {elapsed:.1f}s, budget {budget_s}s"


def test_compositing_exactness():
    with criterion("compositing-exactness", budget_s=30.0):
        rng = np.random.default_rng(2024)

        # anchor the vectorized oracle with an explicit per-pixel loop
        for _ in range(3):
            h, w = rng.integers(1, 7, 2)
            frame = random_frame(rng, h, w)
            styled = random_frame(rng, h, w)
            mask = rng.integers(0, 2, (h, w))
            looped = np.empty((h, w, 3))
            for y in range(h):
                for x in range(w):
                    r = float(mask[y, x])
                    for ch in range(3):
                        looped[y, x, ch] = (
                            r * styled.pixels[y, x, ch]
                            + (1.0 - r) * frame.pixels[y, x, ch]
                        )
            out = composite_single(frame, styled, ClassMask(0, mask))
            assert np.array_equal(out.pixels, looped)

        for _ in range(1000):
            h, w = rng.integers(1, 129, 2)
            frame = random_frame(rng, h, w)
            styled = random_frame(rng, h, w)
            mask = rng.integers(0, 2, (h, w))
            out = composite_single(frame, styled, ClassMask(0, mask))
            m = mask.astype(np.float64)[:, :, None]
            oracle = m * styled.pixels + (1.0 - m) * frame.pixels
            assert np.array_equal(out.pixels, oracle)


def test_gram_and_loss_suite(rng):
    with criterion("gram-loss-suite", budget_s=60.0):
        for _ in range(50):
            c = int(rng.integers(1, 33))
            h, w = rng.integers(1, 17, 2)
            fm = torch.tensor(rng.standard_normal((c, h, w)), dtype=torch.float64)
            g = gram(fm).numpy()
            assert np.abs(g - g.T).max() <= 1e-9
            assert np.linalg.eigvalsh(g).min() >= -1e-6
            a = float(rng.uniform(0.1, 3.0))
            np.testing.assert_allclose(gram(a * fm).numpy(), a * a * g, rtol=1e-9)

        extractor = FeatureExtractor(seed=0)
        style = random_frame(rng, 48, 48)
        pyramid = extract_features(style, extractor)
        assert style_loss(pyramid, [gram(m) for m in pyramid]).item() == 0.0
        fm = torch.tensor(rng.standard_normal((4, 6, 6)))
        assert content_loss(fm, fm).item() == 0.0

        for _ in range(100):
            raw = rng.random((4, 4, 3)) + 1e-3
            pred = raw / raw.sum(axis=2, keepdims=True)
            gt = LabelMap.from_class_indices(rng.integers(0, 3, (4, 4)), 3)
            oracle = 0.0
            for y in range(4):
                for x in range(4):
                    for k in range(3):
                        if gt.one_hot[y, x, k]:
                            oracle -= math.log(max(pred[y, x, k], 1e-12))
            assert abs(cross_entropy(pred, gt) - oracle) <= 1e-9


def _flat_grad_fd(params: list[torch.Tensor], loss_fn, h: float = 1e-6) -> torch.Tensor:
    values = []
    for p in params:
        view = p.data.reshape(-1)
        for i in range(view.numel()):
            orig = view[i].item()
            view[i] = orig + h
            up = loss_fn().item()
            view[i] = orig - h
            down = loss_fn().item()
            view[i] = orig
            values.append((up - down) / (2.0 * h))
    return torch.tensor(values, dtype=torch.float64)


def _relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return ((a - b).norm() / max(a.norm().item(), b.norm().item())).item()


def test_gradient_checks():
    with criterion("gradient-checks", budget_s=120.0):
        rng = np.random.default_rng(7)
        frame = random_frame(rng, 8, 8)

        # perceptual loss w.r.t. transform-network parameters, float64
        extractor = FeatureExtractor(level_channels=(2, 3), seed=3).double()
        net = TransformNet(width=2, seed=5).double()
        params = list(net.parameters())
        assert sum(p.numel() for p in params) <= 1000
        x = frame_to_tensor(frame, torch.float64).unsqueeze(0)
        with torch.no_grad():
            reference = extractor(x)[CONTENT_LEVEL - 1]
            style_grams = [gram(m.squeeze(0)) + 0.01 for m in extractor(x)]

        def perceptual_total():
            _, _, total = _batched_loss(
                net, x, reference, style_grams, extractor, 1.0, 10.0
            )
            return total

        total = perceptual_total()
        total.backward()
        analytic = torch.cat([p.grad.reshape(-1) for p in params]).clone()
        fd = _flat_grad_fd(params, perceptual_total)
        assert _relative_error(analytic, fd) < 1e-4

        # cross-entropy w.r.t. pre-softmax scores, float64
        scores = torch.tensor(rng.standard_normal((8, 8, 3)), requires_grad=True)
        labels = LabelMap.from_class_indices(rng.integers(0, 3, (8, 8)), 3)

        def ce_value():
            return cross_entropy(torch.softmax(scores, dim=-1), labels)

        ce_value().backward()
        analytic_ce = scores.grad.reshape(-1).clone()
        fd_ce = _flat_grad_fd([scores], ce_value)
        assert _relative_error(analytic_ce, fd_ce) < 1e-4


def test_style_training_smoke():
    with criterion("style-training-smoke", budget_s=300.0):
        rng = np.random.default_rng(0)
        content = [random_frame(rng, 16, 16) for _ in range(16)]
        style = random_frame(rng, 32, 32)
        model = train_style(style, content, StyleTrainConfig(iterations=200, seed=0))
        initial = model.meta.initial_loss.total
        final = model.meta.final_loss.total
        assert final < 0.5 * initial, f"loss only went {initial:.4f} -> {final:.4f}"


def test_segmentation_training():
    with criterion("segmentation-training", budget_s=600.0):
        data = generate_dataset(250, seed=42, size=64)
        train = [(s.image, s.labels) for s in data[:200]]
        held = data[200:]
        model = train_seg(train, SegTrainConfig(steps=500, seed=0), CLASS_NAMES)
        assert model.net.param_count() < PARAM_BUDGET
        preds = [model.predict(s.image) for s in held]
        miou = mean_iou(preds, [s.labels for s in held])
        assert miou >= 0.8, f"held-out mIoU {miou:.4f}"

        # the trained model is confident at held-out circle centers
        circle = CLASS_NAMES.index("circle")
        centers = 0
        for sample, probs in zip(held, preds):
            for spec in sample.shapes:
                if spec.kind == "circle":
                    assert probs[spec.cy, spec.cx, circle] > 0.5
                    centers += 1
        assert centers > 0


def test_parallelism():
    with criterion("parallelism", budget_s=120.0):
        rng = np.random.default_rng(5)
        frames = [random_frame(rng, 16, 16) for _ in range(100)]
        seq = benchmark(
            frames, PipelineConfig(mode="sequential"), stub_delays=StubDelays(30, 30)
        )
        par = benchmark(
            frames, PipelineConfig(mode="parallel"), stub_delays=StubDelays(30, 30)
        )
        assert seq.mean_ms >= 60.0
        assert par.mean_ms <= 0.7 * seq.mean_ms, (
            f"parallel {par.mean_ms:.1f}ms vs sequential {seq.mean_ms:.1f}ms"
        )

        # bit-identical outputs across modes on real (non-stub) tiny models
        data = generate_dataset(10, seed=9, size=64)
        seg = train_seg(
            [(s.image, s.labels) for s in data[:6]],
            SegTrainConfig(steps=15, seed=1),
            CLASS_NAMES,
        )
        styles = {
            "a": train_style(
                data[6].image, [s.image for s in data[:4]],
                StyleTrainConfig(iterations=5, seed=2, width=4),
            ),
            "b": train_style(
                data[7].image, [s.image for s in data[:4]],
                StyleTrainConfig(iterations=5, seed=3, width=4),
            ),
        }
        assignment = StyleAssignment({1: "a", 2: "b", 3: "a"})
        cfg = PipelineConfig(assignment=assignment, mode="parallel")
        for sample in data[6:10]:
            with StylingPipeline(seg, styles, cfg) as p:
                out_par, _ = p.process_frame(sample.image)
            with StylingPipeline(seg, styles, replace(cfg, mode="sequential")) as p:
                out_seq, _ = p.process_frame(sample.image)
            assert np.array_equal(out_par.pixels, out_seq.pixels)


def test_stream_semantics():
    with criterion("stream-semantics", budget_s=120.0):
        rng = np.random.default_rng(11)
        frames = [random_frame(rng, 8, 8) for _ in range(100)]
        delay_rng = np.random.default_rng(13)

        seg = DelaySegStub(
            FullFrameSegStub(1, 2), lambda: float(delay_rng.uniform(0.0, 6.0))
        )
        styles = {
            "red": DelayStyleStub(
                ConstantStyleStub((1.0, 0.0, 0.0)),
                lambda: float(delay_rng.uniform(0.0, 6.0)),
            ),
            "blue": DelayStyleStub(
                ConstantStyleStub((0.0, 0.0, 1.0)),
                lambda: float(delay_rng.uniform(0.0, 6.0)),
            ),
        }
        config = PipelineConfig(assignment=StyleAssignment({1: "red"}), mode="parallel")
        control: queue.Queue = queue.Queue()

        colors = []
        with StylingPipeline(seg, styles, config) as pipeline:
            stream = pipeline.process_stream(frames, control)
            for i, result in enumerate(stream):
                assert result.error is None
                assert result.frame_index == i  # order preserved
                pixel_rows = np.unique(result.frame.pixels.reshape(-1, 3), axis=0)
                assert pixel_rows.shape[0] == 1, "mixed-assignment frame"
                colors.append(tuple(pixel_rows[0]))
                if i == 49:
                    control.put(StyleAssignment({1: "blue"}))
        assert len(colors) == 100
        assert colors[:50] == [(1.0, 0.0, 0.0)] * 50
        assert colors[50:] == [(0.0, 0.0, 1.0)] * 50


def _tree_digest(path: Path) -> dict:
    out = {}
    for file in sorted(p for p in path.rglob("*") if p.is_file()):
        out[str(file.relative_to(path))] = hashlib.sha256(file.read_bytes()).hexdigest()
    return out


def test_cli_reproducibility(tmp_path):
    with criterion("cli-reproducibility", budget_s=300.0):
        rng = np.random.default_rng(1)

        # gen-data
        for name in ("ds1", "ds2"):
            assert cli_main(["gen-data", "--n", "8", "--seed", "5", "--size", "32",
                             "--out", str(tmp_path / name)]) == 0
        assert _tree_digest(tmp_path / "ds1") == _tree_digest(tmp_path / "ds2")

        # train-style
        from cbstyle.image import save_frame_png

        save_frame_png(random_frame(rng, 32, 32), tmp_path / "style.png")
        style_args = ["train-style", "--style", str(tmp_path / "style.png"),
                      "--content", str(tmp_path / "ds1"), "--iterations", "5",
                      "--width", "4", "--seed", "3"]
        for name in ("sm1", "sm2"):
            assert cli_main(style_args + ["--out", str(tmp_path / name)]) == 0
        assert _tree_digest(tmp_path / "sm1") == _tree_digest(tmp_path / "sm2")

        # train-seg
        seg_args = ["train-seg", "--data", str(tmp_path / "ds1"), "--steps", "5",
                    "--width", "16", "--seed", "3"]
        for name in ("gm1", "gm2"):
            assert cli_main(seg_args + ["--out", str(tmp_path / name)]) == 0
        assert _tree_digest(tmp_path / "gm1") == _tree_digest(tmp_path / "gm2")

        # run (trained models end to end, twice into separate dirs)
        frames = [random_frame(rng, 32, 32) for _ in range(4)]
        write_frame_dir(frames, tmp_path / "frames")
        for name in ("out1", "out2"):
            config = {
                "schema": 1,
                "seg_model": str(tmp_path / "gm1"),
                "styles": {"s": str(tmp_path / "sm1")},
                "frames": str(tmp_path / "frames"),
                "out": str(tmp_path / name),
                "assignment": {"1": "s", "2": "s", "3": "s"},
                "mode": "parallel",
            }
            config_path = tmp_path / f"{name}.json"
            config_path.write_text(json.dumps(config))
            assert cli_main(["run", "--config", str(config_path)]) == 0
        assert _tree_digest(tmp_path / "out1") == _tree_digest(tmp_path / "out2")

        # bench produces a syntactically valid report; its timing fields are
        # measurements, so reproducibility covers models/datasets/frames only
        write_frame_dir([random_frame(rng, 16, 16) for _ in range(10)], tmp_path / "bf")
        assert cli_main(["bench", "--frames", str(tmp_path / "bf"),
                         "--stub-seg-ms", "1", "--stub-style-ms", "1",
                         "--report", str(tmp_path / "r.json")]) == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["schema"] == 1
