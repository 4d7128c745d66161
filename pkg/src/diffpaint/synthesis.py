"""Self-supervised training data built from randomly sampled strokes.

Each sample is a quadruple: a canvas of coarse background strokes, a
target made by layering finer foreground strokes on that canvas, the
signed difference between the two, and the foreground stroke set itself
as ground truth. No real images are involved; the renderer is the only
source of supervision.

Foreground strokes that would mostly repaint already-painted foreground
area are marked invalid (confidence 0) so ground truth never rewards
heavy overlap: walking the strokes in order, a stroke is dropped when
more than ``OVERLAP_LIMIT`` of its support is already covered by the
kept strokes before it.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .renderer import StrokeSet, empty_canvas, render_batch, stroke_mask

BACKGROUND_SIZE_RANGE = (0.3, 0.9)
FOREGROUND_SIZE_RANGE = (0.1, 0.6)
BACKGROUND_COUNT_RANGE = (4, 12)
OVERLAP_LIMIT = 0.75
CANVAS_FILL = 0.5

# Canvases and targets are snapped to this grid after rendering. Multiples
# of 2^-20 subtract and re-add exactly in float32, so target - canvas is
# bit-exact and canvas + differential == target with no rounding residue,
# while the snap itself moves any pixel by at most 2^-21 < 1e-6.
_QUANT = float(2**20)


def _quantize(raster: torch.Tensor) -> torch.Tensor:
    return torch.round(raster * _QUANT) / _QUANT


@dataclass
class TrainingSample:
    """One synthesized quadruple in single-sample layout."""

    canvas: torch.Tensor  # (3, S, S)
    target: torch.Tensor  # (3, S, S)
    differential: torch.Tensor  # (3, S, S), signed, target - canvas
    target_strokes: StrokeSet  # N strokes, confidences in {0, 1}


@dataclass
class SampleBatch:
    """Batched layout used by the training loop."""

    canvas: torch.Tensor  # (B, 3, S, S)
    target: torch.Tensor  # (B, 3, S, S)
    differential: torch.Tensor  # (B, 3, S, S)
    stroke_params: torch.Tensor  # (B, N, 8)
    stroke_conf: torch.Tensor  # (B, N), values in {0, 1}


def sample_stroke_params(
    batch: int,
    n: int,
    granularity: str,
    rng: torch.Generator,
    size_range: tuple[float, float] | None = None,
) -> torch.Tensor:
    """Draw (batch, n, 8) uniform stroke parameters for one granularity."""
    if granularity == "background":
        lo, hi = size_range or BACKGROUND_SIZE_RANGE
    elif granularity == "foreground":
        lo, hi = size_range or FOREGROUND_SIZE_RANGE
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    u = torch.rand(batch, n, 8, generator=rng)
    params = u.clone()
    params[..., 2:4] = lo + (hi - lo) * u[..., 2:4]  # h, w
    return params


def sample_strokes(
    n: int,
    granularity: str,
    rng: torch.Generator,
    size_range: tuple[float, float] | None = None,
) -> StrokeSet:
    """Sample n strokes of one granularity, all confidences set to 1."""
    if n < 1:
        raise ValueError("need at least one stroke")
    params = sample_stroke_params(1, n, granularity, rng, size_range)[0]
    return StrokeSet(params=params, confidences=torch.ones(n))


def overlap_confidences(masks: torch.Tensor, limit: float = OVERLAP_LIMIT) -> torch.Tensor:
    """Walk stroke masks in order and zero the confidence of any stroke
    whose support is already more than `limit` covered by kept strokes.

    masks: (B, N, S, S) soft alpha maps, binarized at 0.5 here. Returns
    (B, N) confidences in {0, 1}. Dropped strokes do not extend the
    accumulated coverage since they are never rendered.
    """
    binary = masks >= 0.5
    b, n = binary.shape[:2]
    conf = torch.ones(b, n)
    acc = torch.zeros_like(binary[:, 0])
    for i in range(n):
        new = binary[:, i]
        denom = new.sum(dim=(1, 2)).float()
        inter = (new & acc).sum(dim=(1, 2)).float()
        frac = torch.where(denom > 0, inter / denom.clamp(min=1.0), torch.zeros_like(denom))
        keep = frac <= limit
        conf[:, i] = keep.float()
        acc |= new & keep.view(-1, 1, 1)
    return conf


def synthesize_batch(
    rng: torch.Generator,
    batch_size: int,
    size: int = 32,
    max_strokes: int = 8,
    bg_count_range: tuple[int, int] = BACKGROUND_COUNT_RANGE,
    canvas_fill: float = CANVAS_FILL,
    template: torch.Tensor | None = None,
) -> SampleBatch:
    """Synthesize a batch of training quadruples.

    Backgrounds use a per-sample uniform stroke count in bg_count_range;
    foregrounds are always max_strokes strokes with the overlap rule
    applied. All rendering happens here, under no_grad.
    """
    with torch.no_grad():
        lo, hi = bg_count_range
        bg_counts = torch.randint(lo, hi + 1, (batch_size,), generator=rng)
        bg_params = sample_stroke_params(batch_size, hi, "background", rng)
        bg_conf = (torch.arange(hi).unsqueeze(0) < bg_counts.unsqueeze(1)).float()

        blank = empty_canvas(size, canvas_fill).expand(batch_size, 3, size, size)
        canvas = _quantize(render_batch(blank, bg_params, bg_conf, template))

        fg_params = sample_stroke_params(batch_size, max_strokes, "foreground", rng)
        fg_masks = stroke_mask(fg_params, size, template)
        fg_conf = overlap_confidences(fg_masks)

        target = _quantize(render_batch(canvas, fg_params, fg_conf, template))
        differential = target - canvas
    return SampleBatch(
        canvas=canvas,
        target=target,
        differential=differential,
        stroke_params=fg_params,
        stroke_conf=fg_conf,
    )


def build_training_pair(
    rng: torch.Generator,
    size: int = 32,
    max_strokes: int = 8,
    bg_count_range: tuple[int, int] = BACKGROUND_COUNT_RANGE,
    canvas_fill: float = CANVAS_FILL,
    template: torch.Tensor | None = None,
) -> TrainingSample:
    """Synthesize one quadruple (batch of one, squeezed)."""
    b = synthesize_batch(rng, 1, size, max_strokes, bg_count_range, canvas_fill, template)
    return TrainingSample(
        canvas=b.canvas[0],
        target=b.target[0],
        differential=b.differential[0],
        target_strokes=StrokeSet(params=b.stroke_params[0], confidences=b.stroke_conf[0]),
    )


def differential_image(target: torch.Tensor, canvas: torch.Tensor) -> torch.Tensor:
    """Signed element-wise difference target - canvas, range [-1, 1]."""
    if target.shape != canvas.shape:
        raise ValueError(f"shape mismatch: {tuple(target.shape)} vs {tuple(canvas.shape)}")
    return target - canvas
