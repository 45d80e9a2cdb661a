"""Command-line entry points for every workflow.

Commands: gen-data, train-style, train-seg, run, bench, serve. Every
command that involves randomness takes --seed and reproduces its artifacts
byte-for-byte under the same seed. CBS_LOG selects log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

logger = logging.getLogger("cbstyle.cli")


def configure_logging() -> None:
    level = os.environ.get("CBS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        force=True,
    )


def cmd_gen_data(args) -> int:
    from .datagen import generate_dataset, save_dataset

    samples = generate_dataset(args.n, seed=args.seed, size=args.size)
    save_dataset(samples, args.out, seed=args.seed, size=args.size)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _load_content_frames(path: Path) -> list:
    from .image import load_frame_png

    if (path / "images").is_dir():
        path = path / "images"
    files = sorted(path.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no PNG files in {path}")
    return [load_frame_png(f) for f in files]


def cmd_train_style(args) -> int:
    from .image import load_frame_png
    from .styler import StyleTrainConfig, save_style_model, train_style

    style = load_frame_png(args.style)
    content = _load_content_frames(Path(args.content))
    config = StyleTrainConfig(
        iterations=args.iterations,
        step_size=args.step_size,
        content_weight=args.content_weight,
        style_weight=args.style_weight,
        seed=args.seed,
        width=args.width,
        batch_size=args.batch_size,
    )
    model = train_style(style, content, config)
    save_style_model(model, args.out)
    print(
        f"trained style model in {args.out}: total loss "
        f"{model.meta.initial_loss.total:.4f} -> {model.meta.final_loss.total:.4f} "
        f"over {config.iterations} iterations"
    )
    return 0


def cmd_train_seg(args) -> int:
    from .datagen import load_dataset
    from .segmenter import SegTrainConfig, mean_iou, save_seg_model, train_seg

    samples = load_dataset(args.data)
    holdout = samples[len(samples) - args.holdout :] if args.holdout else []
    training = samples[: len(samples) - args.holdout] if args.holdout else samples
    if not training:
        raise ValueError(f"holdout {args.holdout} leaves no training samples")
    index_classes = _dataset_class_names(args.data)
    config = SegTrainConfig(
        steps=args.steps,
        step_size=args.step_size,
        batch_size=args.batch_size,
        seed=args.seed,
        width=args.width,
    )
    model = train_seg([(s.image, s.labels) for s in training], config, index_classes)
    save_seg_model(model, args.out)
    message = (
        f"trained segmentation model in {args.out}: final loss "
        f"{model.meta.final_loss:.4f} over {config.steps} steps"
    )
    if holdout:
        preds = [model.predict(s.image) for s in holdout]
        miou = mean_iou(preds, [s.labels for s in holdout])
        message += f", holdout mIoU {miou:.4f} on {len(holdout)} samples"
    print(message)
    return 0


def _dataset_class_names(path) -> list[str]:
    import json

    index = json.loads((Path(path) / "index.json").read_text())
    return list(index["class_names"])


def cmd_run(args) -> int:
    from .pipeline import StylingPipeline, frame_file_name, read_frame_dir
    from .image import save_frame_png
    from .service import load_run_config, resolve_seg_model, resolve_style_model

    config = load_run_config(args.config)
    if not config.out:
        raise ValueError("run config needs an 'out' directory for the run command")
    seg_model = resolve_seg_model(config.seg_model)
    styles = {sid: resolve_style_model(spec) for sid, spec in config.styles.items()}
    frames = read_frame_dir(config.frames)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    failures = 0
    totals = []
    with StylingPipeline(seg_model, styles, config.pipeline_config()) as pipeline:
        for result in pipeline.process_stream(frames):
            if result.error is not None:
                logger.error("frame %d failed: %s", result.frame_index, result.error)
                failures += 1
                continue
            save_frame_png(result.frame, out_dir / frame_file_name(result.frame_index))
            totals.append(result.timings.t_total)
    mean = sum(totals) / len(totals) if totals else 0.0
    print(
        f"processed {len(totals)}/{len(frames)} frames into {out_dir} "
        f"(mean {mean:.1f} ms/frame)"
    )
    return 0 if failures == 0 else 1


def cmd_bench(args) -> int:
    from .image import StyleAssignment
    from .pipeline import PipelineConfig, StubDelays, benchmark, read_frame_dir

    frames = read_frame_dir(args.frames)
    if args.stub_seg_ms is not None or args.stub_style_ms is not None:
        if args.stub_seg_ms is None or args.stub_style_ms is None:
            raise ValueError("stub benchmarking needs both --stub-seg-ms and --stub-style-ms")
        config = PipelineConfig(mode=args.mode, worker_budget=args.worker_budget)
        report = benchmark(
            frames, config, stub_delays=StubDelays(args.stub_seg_ms, args.stub_style_ms)
        )
    else:
        if not args.config:
            raise ValueError("benchmarking real models needs --config")
        from .service import load_run_config, resolve_seg_model, resolve_style_model

        run_config = load_run_config(args.config)
        config = PipelineConfig(
            assignment=StyleAssignment(run_config.assignment),
            feather_radius=run_config.feather_radius,
            mode=args.mode,
            worker_budget=args.worker_budget,
        )
        report = benchmark(
            frames,
            config,
            seg_model=resolve_seg_model(run_config.seg_model),
            styles={k: resolve_style_model(v) for k, v in run_config.styles.items()},
        )
    report.write_json(args.report)
    print(
        f"{report.frames} frames, {report.mode}: mean {report.mean_ms:.2f} ms, "
        f"median {report.median_ms:.2f} ms, p95 {report.p95_ms:.2f} ms, "
        f"{report.fps:.2f} fps -> {args.report}"
    )
    return 0


def cmd_serve(args) -> int:
    from .service import load_run_config, serve

    config = load_run_config(args.config)
    serve(config, ui_dir=args.ui_dir, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbstyle",
        description="Per-class style transfer with live steering over a frame stream.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic shapes dataset")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="image side length")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-style", help="train a style transform network")
    p.add_argument("--style", required=True, help="style image (PNG)")
    p.add_argument("--content", required=True, help="directory of content PNGs (or a dataset dir)")
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--step-size", type=float, default=0.02)
    p.add_argument("--content-weight", type=float, default=1.0)
    p.add_argument("--style-weight", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_train_style)

    p = sub.add_parser("train-seg", help="train the segmentation network")
    p.add_argument("--data", required=True, help="dataset directory (gen-data layout)")
    p.add_argument("--out", required=True, help="output checkpoint directory")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--step-size", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--holdout", type=int, default=0, help="samples held out for mIoU eval")
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("run", help="style a frame directory offline")
    p.add_argument("--config", required=True, help="run config JSON")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="measure per-frame latency")
    p.add_argument("--frames", required=True, help="input frame directory")
    p.add_argument("--mode", choices=["parallel", "sequential"], default="parallel")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--stub-seg-ms", type=float, default=None)
    p.add_argument("--stub-style-ms", type=float, default=None)
    p.add_argument("--worker-budget", type=int, default=4)
    p.add_argument("--config", default=None, help="run config JSON (real-model benchmarking)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="stream frames with live steering")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--port", type=int, default=None, help="override the config port")
    p.add_argument("--ui-dir", default=None, help="static UI directory to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        logger.debug("command failed", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
