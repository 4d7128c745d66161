"""Stroke-based neural painting: a differentiable rasterizer, a
difference-query stroke predictor trained on synthetic data with an
optional Wasserstein critic, and coarse-to-fine painting of real images
with replayable stroke plans."""

from .renderer import (
    StrokeParams,
    StrokeSet,
    composite,
    empty_canvas,
    rasterize_stroke,
    render_batch,
    render_sequence,
    stroke_mask,
)
from .synthesis import TrainingSample, build_training_pair, synthesize_batch
from .model import Painter, coord_channels
from .critic import Critic
from .losses import (
    LossReport,
    Matching,
    gaussian_wasserstein,
    match_strokes,
    pixel_loss,
    stroke_loss,
)
from .training import TrainConfig, Trainer, load_checkpoint, train
from .inference import StrokePlan, paint, replay, stitch_attention
from .evaluate import EvalReport, evaluate, perceptual_proxy, pixel_l1

__version__ = "0.1.0"

__all__ = [
    "StrokeParams",
    "StrokeSet",
    "composite",
    "empty_canvas",
    "rasterize_stroke",
    "render_batch",
    "render_sequence",
    "stroke_mask",
    "TrainingSample",
    "build_training_pair",
    "synthesize_batch",
    "Painter",
    "coord_channels",
    "Critic",
    "LossReport",
    "Matching",
    "gaussian_wasserstein",
    "match_strokes",
    "pixel_loss",
    "stroke_loss",
    "TrainConfig",
    "Trainer",
    "load_checkpoint",
    "train",
    "StrokePlan",
    "paint",
    "replay",
    "stitch_attention",
    "EvalReport",
    "evaluate",
    "perceptual_proxy",
    "pixel_l1",
    "__version__",
]
