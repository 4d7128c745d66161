"""Differentiable stroke rasterizer and iterative alpha compositor.

A brushstroke is eight scalars: center (x, y), height h, width w, rotation
theta (fraction of a half turn), and color (r, g, b), all expressed as
fractions of the square frame. Rasterization places a soft-edged alpha
template under an affine transform; compositing blends the stroke onto the
canvas weighted by a per-stroke confidence:

    out = stroke_image * (c * mask) + canvas * (1 - c * mask)

Every operation here is a pure function of tensors and differentiates
through all eight stroke parameters wherever the soft edge is nonzero.

Tensor conventions: rasters are channel-first float tensors, canvases
``(3, S, S)`` or batched ``(B, 3, S, S)``, masks ``(S, S)`` with leading
batch dims matching the parameter tensor. Frames are square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

# Soft-edge falloff length, as a fraction of each half-extent. The alpha
# template crosses 0.5 exactly on the nominal rectangle boundary, so
# binarizing at 0.5 recovers the hard w-by-h support.
EDGE_FALLOFF = 0.05

PARAM_COUNT = 8
MIN_RENDER_SIZE = 8

# slot order used by every (..., 8) parameter tensor
SLOT_NAMES = ("x", "y", "h", "w", "theta", "r", "g", "b")


@dataclass(frozen=True)
class StrokeParams:
    """One brushstroke in normalized frame coordinates.

    x, y, r, g, b lie in [0, 1]; h, w in (0, 1]; theta in [0, 1) and maps
    to a rotation of theta * pi (a rectangle is symmetric under half
    turns, so the half-open unit interval covers every orientation once).
    """

    x: float
    y: float
    h: float
    w: float
    theta: float
    r: float
    g: float
    b: float

    def __post_init__(self):
        vals = self.as_tuple()
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite stroke parameter: {vals}")
        for name in ("x", "y", "r", "g", "b"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"stroke {name}={v} outside [0, 1]")
        for name in ("h", "w"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"stroke {name}={v} outside (0, 1]")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"stroke theta={self.theta} outside [0, 1)")

    def as_tuple(self) -> tuple:
        return (self.x, self.y, self.h, self.w, self.theta, self.r, self.g, self.b)

    def as_tensor(self, dtype=torch.float32) -> torch.Tensor:
        return torch.tensor(self.as_tuple(), dtype=dtype)

    @classmethod
    def from_tensor(cls, t: torch.Tensor) -> "StrokeParams":
        if t.shape != (PARAM_COUNT,):
            raise ValueError(f"expected shape ({PARAM_COUNT},), got {tuple(t.shape)}")
        return cls(*(float(v) for v in t))


@dataclass
class StrokeSet:
    """An ordered list of strokes with one confidence value per stroke."""

    params: torch.Tensor  # (N, 8)
    confidences: torch.Tensor  # (N,)

    def __post_init__(self):
        if self.params.ndim != 2 or self.params.shape[1] != PARAM_COUNT:
            raise ValueError(f"params must be (N, {PARAM_COUNT}), got {tuple(self.params.shape)}")
        if self.confidences.shape != (self.params.shape[0],):
            raise ValueError("confidences must be (N,) aligned with params")

    def __len__(self) -> int:
        return self.params.shape[0]

    def stroke(self, i: int) -> StrokeParams:
        return StrokeParams.from_tensor(self.params[i])

    def valid(self) -> "StrokeSet":
        """Strokes whose confidence is >= 0.5 (the kept subset)."""
        keep = self.confidences >= 0.5
        return StrokeSet(self.params[keep], self.confidences[keep])


@dataclass
class RenderedStroke:
    """A rasterized stroke: solid color image plus its alpha mask."""

    image: torch.Tensor  # (..., 3, S, S)
    mask: torch.Tensor  # (..., S, S)


def empty_canvas(size: int, fill: float = 0.5, dtype=torch.float32) -> torch.Tensor:
    """A blank (3, size, size) canvas filled with a constant gray level."""
    return torch.full((3, size, size), fill, dtype=dtype)


def load_brush_template(path) -> torch.Tensor:
    """Load an optional grayscale brush texture as an alpha template.

    8-bit values 0-255 map linearly to alpha [0, 1]. When no template is
    given the renderer uses the procedural soft rectangle instead.
    """
    from PIL import Image

    img = Image.open(path).convert("L")
    return torch.from_numpy(np.asarray(img).copy()).float() / 255.0


def _check_params(params: torch.Tensor):
    if params.shape[-1] != PARAM_COUNT:
        raise ValueError(f"stroke parameters need {PARAM_COUNT} slots, got {params.shape[-1]}")
    if not torch.isfinite(params).all():
        raise ValueError("non-finite stroke parameter")
    if (params[..., 2] <= 0).any() or (params[..., 3] <= 0).any():
        raise ValueError("stroke h and w must be positive")


def _local_coords(params: torch.Tensor, size: int):
    """Map pixel centers into each stroke's local frame.

    Returns (u, v) of shape params.shape[:-1] + (size, size); the nominal
    stroke support is |u| <= 1, |v| <= 1. u runs along the w axis and v
    along the h axis, after undoing the rotation theta * pi.
    """
    dtype, device = params.dtype, params.device
    centers = (torch.arange(size, dtype=dtype, device=device) + 0.5) / size
    gy, gx = torch.meshgrid(centers, centers, indexing="ij")  # (S, S)

    lead = params.shape[:-1]
    x, y, h, w, theta = (params[..., i].reshape(lead + (1, 1)) for i in range(5))
    phi = theta * math.pi
    cos, sin = torch.cos(phi), torch.sin(phi)
    dx = gx - x
    dy = gy - y
    u = (cos * dx + sin * dy) / (w / 2)
    v = (-sin * dx + cos * dy) / (h / 2)
    return u, v


def stroke_mask(params: torch.Tensor, size: int, template: torch.Tensor | None = None) -> torch.Tensor:
    """Rasterize the alpha mask for a batch of strokes.

    params: (..., 8) tensor. Returns (..., size, size) alpha in [0, 1].
    With no template the mask is the procedural soft rectangle
    sigmoid((1 - |u|) / f) * sigmoid((1 - |v|) / f); with a template it is
    the texture bilinearly resampled under the same affine map, windowed
    to zero outside the support. Out-of-frame strokes simply clip.
    """
    _check_params(params)
    if size < MIN_RENDER_SIZE:
        raise ValueError(f"render size must be >= {MIN_RENDER_SIZE}, got {size}")
    u, v = _local_coords(params, size)
    if template is None:
        return torch.sigmoid((1 - u.abs()) / EDGE_FALLOFF) * torch.sigmoid((1 - v.abs()) / EDGE_FALLOFF)

    lead = u.shape[:-2]
    grid = torch.stack([u, v], dim=-1).reshape(-1, size, size, 2)
    tex = template.to(u.dtype).expand(grid.shape[0], 1, *template.shape)
    sampled = F.grid_sample(tex, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return sampled.reshape(lead + (size, size))


def rasterize_stroke(
    stroke: StrokeParams | torch.Tensor, size: int, template: torch.Tensor | None = None
) -> RenderedStroke:
    """Render one stroke (or a batch) to a color image plus alpha mask.

    The image is the stroke color broadcast across the frame; the mask
    carries the brush shape, so the composited contribution is
    color * alpha. Gradients flow to all eight parameters.
    """
    params = stroke.as_tensor() if isinstance(stroke, StrokeParams) else stroke
    mask = stroke_mask(params, size, template)
    color = params[..., 5:8]
    image = color.reshape(color.shape[:-1] + (3, 1, 1)).expand(color.shape[:-1] + (3, size, size))
    return RenderedStroke(image=image, mask=mask)


def composite(canvas: torch.Tensor, stroke: RenderedStroke, confidence) -> torch.Tensor:
    """Blend one rendered stroke onto the canvas.

    out = image * (c * mask) + canvas * (1 - c * mask), clamped to [0, 1].
    `confidence` may be a python float or any tensor broadcastable over
    the mask. Affine in the confidence; differentiable in everything.
    """
    if stroke.image.shape[-2:] != canvas.shape[-2:] or stroke.mask.shape[-2:] != canvas.shape[-2:]:
        raise ValueError(
            f"canvas {tuple(canvas.shape)} and stroke {tuple(stroke.image.shape)} / "
            f"{tuple(stroke.mask.shape)} sizes do not match"
        )
    c = confidence if isinstance(confidence, torch.Tensor) else torch.as_tensor(confidence, dtype=canvas.dtype)
    cm = (c * stroke.mask).unsqueeze(-3)  # broadcast over the channel axis
    return (stroke.image * cm + canvas * (1 - cm)).clamp(0.0, 1.0)


def render_sequence(
    canvas: torch.Tensor, strokes: StrokeSet, template: torch.Tensor | None = None
) -> torch.Tensor:
    """Left-fold composite over an ordered stroke set.

    Later strokes occlude earlier ones where their masks overlap; an
    empty set returns the canvas unchanged.
    """
    out = canvas
    size = canvas.shape[-1]
    for i in range(len(strokes)):
        rendered = rasterize_stroke(strokes.params[i], size, template)
        out = composite(out, rendered, strokes.confidences[i])
    return out


def render_batch(
    canvas: torch.Tensor,
    params: torch.Tensor,
    confidences: torch.Tensor,
    template: torch.Tensor | None = None,
) -> torch.Tensor:
    """Batched render_sequence used on the training path.

    canvas (B, 3, S, S), params (B, N, 8), confidences (B, N). Strokes are
    composited in index order with the exact arithmetic of composite(), so
    the scalar and batched paths agree bitwise.
    """
    out = canvas
    size = canvas.shape[-1]
    for i in range(params.shape[1]):
        rendered = rasterize_stroke(params[:, i], size, template)
        out = composite(out, rendered, confidences[:, i].reshape(-1, 1, 1))
    return out


def coverage_fraction(mask_new: torch.Tensor, mask_accumulated: torch.Tensor) -> float:
    """Fraction of a new stroke's support already covered by prior strokes.

    Masks are binarized at 0.5. Returns sum(new & accumulated) / sum(new),
    or 0.0 for an empty new mask (nothing to suppress).
    """
    if mask_new.shape != mask_accumulated.shape:
        raise ValueError("masks must share a shape")
    new = mask_new >= 0.5
    acc = mask_accumulated >= 0.5
    denom = new.sum()
    if denom == 0:
        return 0.0
    return float((new & acc).sum()) / float(denom)
