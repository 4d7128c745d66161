"""Reconstruction metrics and batch evaluation over painted images.

Two distances are reported per image: plain mean-absolute pixel error,
and a perceptual proxy — mean-absolute error summed over four levels of
a Gaussian pyramid, so blurrier structural agreement counts alongside
per-pixel agreement. The proxy needs no pretrained network; its values
are NOT comparable to learned-feature perceptual scores, and reports
label the column ``pcpt_proxy`` to keep that distinction visible. A
different backend can be passed wherever the proxy is accepted.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .inference import DEFAULT_SCALES, paint
from .training import load_checkpoint

PYRAMID_LEVELS = 4
PYRAMID_SIGMA = 1.0

MetricFn = Callable[[torch.Tensor, torch.Tensor], float]


def load_image(path, side: Optional[int] = None) -> torch.Tensor:
    """Read an 8-bit image as a (3, S, S) float tensor in [0, 1],
    optionally resampled to a square of the given side."""
    img = Image.open(path).convert("RGB")
    if side is not None:
        img = img.resize((side, side), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).contiguous()


def save_image(tensor: torch.Tensor, path) -> None:
    """Write a (3, S, S) or (S, S) float tensor in [0, 1] as an 8-bit image."""
    arr = tensor.detach().clamp(0, 1).mul(255).round().to(torch.uint8).numpy()
    if arr.ndim == 3:
        arr = arr.transpose(1, 2, 0)
    Image.fromarray(arr).save(path)


def pixel_l1(a: torch.Tensor, b: torch.Tensor) -> float:
    """Unweighted mean absolute difference (the evaluation-side metric)."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return float((a - b).abs().mean())


def _pyramid(image: np.ndarray, levels: int) -> List[np.ndarray]:
    out = [image]
    for _ in range(levels - 1):
        blurred = gaussian_filter(out[-1], sigma=(0, PYRAMID_SIGMA, PYRAMID_SIGMA))
        out.append(blurred[:, ::2, ::2])
    return out


def perceptual_proxy(a: torch.Tensor, b: torch.Tensor, levels: int = PYRAMID_LEVELS) -> float:
    """Mean-abs distance summed over Gaussian-pyramid levels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    pa = _pyramid(a.detach().numpy(), levels)
    pb = _pyramid(b.detach().numpy(), levels)
    return float(sum(np.abs(la - lb).mean() for la, lb in zip(pa, pb)))


@dataclass
class ImageResult:
    name: str
    pixel_l1: float
    pcpt_proxy: float
    strokes: int
    seconds: float


@dataclass
class EvalReport:
    results: List[ImageResult] = field(default_factory=list)

    @property
    def mean_pixel_l1(self) -> float:
        return float(np.mean([r.pixel_l1 for r in self.results]))

    @property
    def mean_pcpt_proxy(self) -> float:
        return float(np.mean([r.pcpt_proxy for r in self.results]))

    @property
    def mean_strokes(self) -> float:
        return float(np.mean([r.strokes for r in self.results]))

    @property
    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.results))

    def render(self) -> str:
        lines = [
            f"images: {len(self.results)}",
            f"mean_pixel_l1: {self.mean_pixel_l1:.6f}",
            f"mean_pcpt_proxy: {self.mean_pcpt_proxy:.6f}",
            f"mean_strokes: {self.mean_strokes:.2f}",
            f"total_seconds: {self.total_seconds:.2f}",
            "# image pixel_l1 pcpt_proxy strokes seconds",
        ]
        for r in self.results:
            lines.append(f"{r.name} {r.pixel_l1:.6f} {r.pcpt_proxy:.6f} {r.strokes} {r.seconds:.2f}")
        return "\n".join(lines) + "\n"


def evaluate(
    image_paths: Sequence,
    checkpoint_path,
    scales: Sequence[int] = DEFAULT_SCALES,
    side: Optional[int] = None,
    perceptual: MetricFn = perceptual_proxy,
) -> EvalReport:
    """Paint every readable image and measure the reconstructions.

    Unreadable images are skipped with a warning; an empty result set is
    an error. Rows are sorted by filename for stable output.
    """
    ckpt = load_checkpoint(checkpoint_path)
    side = side or max(scales) * ckpt.painter.patch_size
    report = EvalReport()
    for path in sorted(image_paths, key=lambda p: Path(p).name):
        try:
            target = load_image(path, side)
        except OSError as exc:
            print(f"warning: skipping unreadable image {path}: {exc}", file=sys.stderr)
            continue
        started = time.time()
        canvas, plan = paint(target, ckpt.painter, scales=scales, manifest_hash=ckpt.manifest_hash)
        report.results.append(
            ImageResult(
                name=Path(path).name,
                pixel_l1=pixel_l1(target, canvas),
                pcpt_proxy=perceptual(target, canvas),
                strokes=len(plan.strokes),
                seconds=time.time() - started,
            )
        )
    if not report.results:
        raise ValueError("no readable images to evaluate")
    return report
