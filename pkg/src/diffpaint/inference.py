"""Coarse-to-fine painting of real images.

At each grid scale g the working canvas and the target are split into
g x g non-overlapping patches, resampled to the model's patch size, and
fed through the painter in one batch. Strokes whose confidence logit is
negative are skipped; the rest are mapped into global frame coordinates
(scale by 1/g, translate by the patch origin) and rendered sequentially
onto the full-resolution canvas in row-major patch order.

Stroke parameters are rounded to six decimals *before* rendering, and
the plan file stores exactly those rounded values, so replaying a plan
reproduces the painted canvas bit for bit: painting and replay draw from
identical numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from .model import Painter
from .renderer import StrokeParams, composite, empty_canvas, rasterize_stroke

DEFAULT_SCALES = (1, 2, 4, 8)
MIN_EXTENT = 1e-6  # quantized sizes may not collapse to zero
_FLOAT_SLOTS = ("x", "y", "h", "w", "theta", "r", "g", "b", "conf")


def quantize(value: float, decimals: int = 6) -> float:
    """Round to the plan file's decimal grid (the value that is rendered
    is the value that is written)."""
    return round(float(value) * 10**decimals) / 10**decimals


@dataclass
class PlanStroke:
    """One accepted stroke in global [0,1] frame coordinates."""

    scale: int
    row: int
    col: int
    params: Tuple[float, ...]  # x y h w theta r g b
    conf: float

    def to_line(self) -> str:
        floats = " ".join(f"{v:.6f}" for v in (*self.params, self.conf))
        return f"{self.scale} {self.row} {self.col} {floats}"

    @classmethod
    def from_line(cls, line: str, lineno: int) -> "PlanStroke":
        parts = line.split()
        if len(parts) != 12:
            raise ValueError(f"plan line {lineno}: expected 12 fields, got {len(parts)}")
        try:
            scale, row, col = (int(p) for p in parts[:3])
            floats = [float(p) for p in parts[3:]]
        except ValueError as exc:
            raise ValueError(f"plan line {lineno}: {exc}") from None
        return cls(scale=scale, row=row, col=col, params=tuple(floats[:8]), conf=floats[8])


@dataclass
class StrokePlan:
    """Ordered stroke record of one painting, with enough header context
    to replay it: output size, grid schedule, model manifest hash."""

    image_size: int
    scales: Tuple[int, ...]
    manifest_hash: str
    strokes: List[PlanStroke] = field(default_factory=list)

    def serialize(self) -> str:
        lines = [
            f"# size: {self.image_size}",
            f"# scales: {' '.join(str(s) for s in self.scales)}",
            f"# manifest: {self.manifest_hash}",
            "# columns: scale row col x y h w theta r g b conf",
        ]
        lines.extend(s.to_line() for s in self.strokes)
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "StrokePlan":
        size = None
        scales: Tuple[int, ...] = ()
        manifest = ""
        strokes = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                key, _, value = body.partition(":")
                key = key.strip().lower()
                if key == "size":
                    size = int(value)
                elif key == "scales":
                    scales = tuple(int(v) for v in value.split())
                elif key == "manifest":
                    manifest = value.strip()
                continue
            strokes.append(PlanStroke.from_line(line, lineno))
        if size is None:
            raise ValueError("plan is missing its '# size:' header")
        return cls(image_size=size, scales=scales, manifest_hash=manifest, strokes=strokes)

    def save(self, path) -> None:
        Path(path).write_text(self.serialize())

    @classmethod
    def load(cls, path) -> "StrokePlan":
        return cls.parse(Path(path).read_text())


def _to_patches(image: torch.Tensor, grid: int, patch_size: int) -> torch.Tensor:
    """(3, S, S) -> (grid*grid, 3, P, P), row-major, resampled per patch."""
    side = image.shape[-1]
    step = side // grid
    patches = image.unfold(-2, step, step).unfold(-2, step, step)  # (3, g, g, step, step)
    patches = patches.permute(1, 2, 0, 3, 4).reshape(grid * grid, 3, step, step)
    if step != patch_size:
        patches = F.interpolate(patches, size=(patch_size, patch_size), mode="bilinear", align_corners=False)
    return patches


def _quantized_stroke(local: Sequence[float], grid: int, row: int, col: int) -> Tuple[float, ...]:
    x, y, h, w, theta, r, g, b = (float(v) for v in local)
    out = (
        quantize((col + x) / grid),
        quantize((row + y) / grid),
        max(quantize(h / grid), MIN_EXTENT),
        max(quantize(w / grid), MIN_EXTENT),
        quantize(theta) % 1.0,  # rounding up to 1.0 wraps back to 0
        quantize(r),
        quantize(g),
        quantize(b),
    )
    return out


def _render_plan_stroke(canvas: torch.Tensor, stroke: PlanStroke, template: Optional[torch.Tensor]) -> torch.Tensor:
    params = StrokeParams(*stroke.params)
    rendered = rasterize_stroke(params, canvas.shape[-1], template=template)
    return composite(canvas, rendered, torch.ones(()))


@torch.no_grad()
def paint(
    image: torch.Tensor,
    painter: Painter,
    scales: Sequence[int] = DEFAULT_SCALES,
    manifest_hash: str = "",
    canvas_fill: float = 0.5,
    template: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, StrokePlan]:
    """Paint `image` (3, S, S in [0,1]) coarse-to-fine.

    S must be square and divisible by every grid in `scales`. Returns the
    final canvas and the plan that reproduces it.
    """
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[-1] != image.shape[-2]:
        raise ValueError(f"expected a square (3, S, S) image, got {tuple(image.shape)}")
    side = image.shape[-1]
    for g in sorted(scales):
        if side % g != 0:
            raise ValueError(f"image side {side} is not divisible by grid {g}")
    painter.eval()
    plan = StrokePlan(image_size=side, scales=tuple(scales), manifest_hash=manifest_hash)
    canvas = empty_canvas(side, fill=canvas_fill, dtype=image.dtype)
    for g in sorted(scales):
        canvas_patches = _to_patches(canvas, g, painter.patch_size)
        target_patches = _to_patches(image, g, painter.patch_size)
        params, logits = painter(canvas_patches, target_patches)
        for idx in range(g * g):
            row, col = divmod(idx, g)
            for n in range(params.shape[1]):
                logit = float(logits[idx, n])
                if logit < 0:
                    continue
                stroke = PlanStroke(
                    scale=g,
                    row=row,
                    col=col,
                    params=_quantized_stroke(params[idx, n].tolist(), g, row, col),
                    conf=quantize(logit),
                )
                plan.strokes.append(stroke)
                canvas = _render_plan_stroke(canvas, stroke, template)
    return canvas, plan


@torch.no_grad()
def replay(
    plan: StrokePlan,
    size: Optional[int] = None,
    frame_every: int = 0,
    canvas_fill: float = 0.5,
    template: Optional[torch.Tensor] = None,
) -> Tuple[List[torch.Tensor], torch.Tensor]:
    """Re-render a plan stroke by stroke.

    Returns (frames, final canvas); frames are captured every
    `frame_every` strokes (0 disables capture; an empty plan yields no
    frames either way).
    """
    side = size or plan.image_size
    canvas = empty_canvas(side, fill=canvas_fill)
    frames: List[torch.Tensor] = []
    n = len(plan.strokes)
    if frame_every > 0 and n > 0:
        frames.append(canvas.clone())
    for i, stroke in enumerate(plan.strokes):
        canvas = _render_plan_stroke(canvas, stroke, template)
        if frame_every > 0 and ((i + 1) % frame_every == 0 or i == n - 1):
            frames.append(canvas.clone())
    return frames, canvas


@torch.no_grad()
def stitch_attention(
    image: torch.Tensor,
    painter: Painter,
    grid: int = 4,
    canvas_fill: float = 0.5,
) -> torch.Tensor:
    """Per-patch decoder attention maps stitched into full-image mosaics.

    Returns (N, grid * P/4, grid * P/4), one mosaic per stroke query;
    each patch's block keeps its own normalization (sums to 1).
    """
    if image.shape[-1] % grid != 0:
        raise ValueError(f"image side {image.shape[-1]} is not divisible by grid {grid}")
    painter.eval()
    canvas = empty_canvas(image.shape[-1], fill=canvas_fill, dtype=image.dtype)
    canvas_patches = _to_patches(canvas, grid, painter.patch_size)
    target_patches = _to_patches(image, grid, painter.patch_size)
    maps = painter.attention_maps(canvas_patches, target_patches)  # (g*g, N, p, p)
    p = maps.shape[-1]
    n_queries = maps.shape[1]
    mosaic = torch.zeros(n_queries, grid * p, grid * p, dtype=maps.dtype)
    for idx in range(grid * grid):
        row, col = divmod(idx, grid)
        mosaic[:, row * p : (row + 1) * p, col * p : (col + 1) * p] = maps[idx]
    return mosaic
