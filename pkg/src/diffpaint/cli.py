"""Command-line entry points.

Subcommands: train, paint, replay, eval, attn, synth-dump. Every
subcommand exits 0 on success and nonzero with a single `error: ...`
line on stderr otherwise.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from .evaluate import evaluate, load_image, save_image
from .inference import DEFAULT_SCALES, StrokePlan, paint, replay, stitch_attention
from .renderer import load_brush_template
from .synthesis import build_training_pair
from .training import TrainConfig, Trainer, load_checkpoint


def _parse_scales(text: str):
    try:
        scales = tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ValueError(f"bad --scales value {text!r}; expected integers like '1,2,4,8'") from None
    if not scales or any(s < 1 for s in scales):
        raise ValueError(f"bad --scales value {text!r}; grids must be positive")
    return scales


def _add_train(sub):
    p = sub.add_parser("train", help="train a painter (and critic) on synthetic strokes")
    p.add_argument("--out", required=True, help="output directory for checkpoints and the log")
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--pretrain-steps", type=int, dest="pretrain_steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--patch-size", type=int, dest="patch_size")
    p.add_argument("--max-strokes", type=int, dest="max_strokes")
    p.add_argument("--width", type=int)
    p.add_argument("--no-differential", action="store_true", default=None)
    p.add_argument("--no-coord", action="store_true", default=None)
    p.add_argument("--no-discriminator", action="store_true", default=None)
    p.add_argument("--no-conf-reg", action="store_true", default=None)
    p.add_argument("--paper-scale", action="store_true", help="full-size preset instead of desk defaults")
    p.add_argument("--log-every", type=int, default=100)


def _add_paint(sub):
    p = sub.add_parser("paint", help="paint an image coarse-to-fine with a trained model")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output canvas image path")
    p.add_argument("--plan", help="also write the stroke plan here")
    p.add_argument("--scales", default="1,2,4,8")
    p.add_argument("--size", type=int, help="square working resolution (default: max grid * patch size)")
    p.add_argument("--canvas-fill", type=float, default=0.5)
    p.add_argument("--template", help="optional grayscale brush texture image")


def _add_replay(sub):
    p = sub.add_parser("replay", help="re-render a stroke plan, optionally dumping frames")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True, help="final canvas image path")
    p.add_argument("--frames-dir", help="write numbered frames here")
    p.add_argument("--frame-every", type=int, default=0, help="capture a frame every k strokes")
    p.add_argument("--size", type=int, help="override render resolution")
    p.add_argument("--canvas-fill", type=float, default=0.5)
    p.add_argument("--template", help="optional grayscale brush texture image")


def _add_eval(sub):
    p = sub.add_parser("eval", help="paint and score a set of images")
    p.add_argument("--images", required=True, nargs="+")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scales", default="1,2,4,8")
    p.add_argument("--out", help="write the report here as well as stdout")


def _add_attn(sub):
    p = sub.add_parser("attn", help="export stitched decoder attention mosaics")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--grid", type=int, default=4)


def _add_synth(sub):
    p = sub.add_parser("synth-dump", help="write synthetic training samples for inspection")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--size", type=int, default=128, help="render resolution for the dumps")
    p.add_argument("--max-strokes", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffpaint", description="stroke-based neural painting")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_paint(sub)
    _add_replay(sub)
    _add_eval(sub)
    _add_attn(sub)
    _add_synth(sub)
    return parser


def _cmd_train(args) -> int:
    overrides = {}
    for key in (
        "seed",
        "total_steps",
        "pretrain_steps",
        "batch_size",
        "patch_size",
        "max_strokes",
        "width",
        "no_differential",
        "no_coord",
        "no_discriminator",
        "no_conf_reg",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if args.config:
        config = TrainConfig.from_file(args.config, **overrides)
    elif args.paper_scale:
        config = TrainConfig.paper_scale(**overrides)
    else:
        config = TrainConfig(**overrides)
    final = Trainer(config, args.out).train(log_every=args.log_every)
    print(f"final checkpoint: {final}")
    return 0


def _cmd_paint(args) -> int:
    scales = _parse_scales(args.scales)
    ckpt = load_checkpoint(args.checkpoint)
    side = args.size or max(scales) * ckpt.painter.patch_size
    template = load_brush_template(args.template) if args.template else None
    image = load_image(args.image, side)
    canvas, plan = paint(
        image,
        ckpt.painter,
        scales=scales,
        manifest_hash=ckpt.manifest_hash,
        canvas_fill=args.canvas_fill,
        template=template,
    )
    save_image(canvas, args.out)
    if args.plan:
        plan.save(args.plan)
    print(f"painted {args.image} with {len(plan.strokes)} strokes -> {args.out}")
    return 0


def _cmd_replay(args) -> int:
    plan = StrokePlan.load(args.plan)
    template = load_brush_template(args.template) if args.template else None
    frames, canvas = replay(
        plan,
        size=args.size,
        frame_every=args.frame_every if args.frames_dir else 0,
        canvas_fill=args.canvas_fill,
        template=template,
    )
    save_image(canvas, args.out)
    if args.frames_dir:
        frames_dir = Path(args.frames_dir)
        frames_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames):
            save_image(frame, frames_dir / f"frame_{i:05d}.png")
        print(f"replayed {len(plan.strokes)} strokes, {len(frames)} frames -> {args.out}")
    else:
        print(f"replayed {len(plan.strokes)} strokes -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    report = evaluate(args.images, args.checkpoint, scales=_parse_scales(args.scales))
    text = report.render()
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def _cmd_attn(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    side = args.grid * ckpt.painter.patch_size
    image = load_image(args.image, side)
    mosaics = stitch_attention(image, ckpt.painter, grid=args.grid)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for n in range(mosaics.shape[0]):
        m = mosaics[n]
        m = m / m.max().clamp_min(1e-12)  # stretch each mosaic for visibility
        save_image(m, out_dir / f"attention_query_{n:02d}.png")
    print(f"wrote {mosaics.shape[0]} attention mosaics to {out_dir}")
    return 0


def _cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    gen = torch.Generator().manual_seed(args.seed)
    for i in range(args.count):
        sample = build_training_pair(gen, size=args.size, max_strokes=args.max_strokes)
        save_image(sample.canvas, out_dir / f"sample_{i:03d}_canvas.png")
        save_image(sample.target, out_dir / f"sample_{i:03d}_target.png")
        save_image(sample.differential.abs(), out_dir / f"sample_{i:03d}_differential.png")
        lines = [
            " ".join(f"{v:.6f}" for v in (*sample.target_strokes.params[n].tolist(), float(sample.target_strokes.confidences[n])))
            for n in range(len(sample.target_strokes))
        ]
        (out_dir / f"sample_{i:03d}_strokes.txt").write_text("# x y h w theta r g b conf\n" + "\n".join(lines) + "\n")
    print(f"wrote {args.count} samples to {out_dir}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "paint": _cmd_paint,
    "replay": _cmd_replay,
    "eval": _cmd_eval,
    "attn": _cmd_attn,
    "synth-dump": _cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
