"""Wasserstein critic over painted patches.

Five strided conv blocks (the first sees coordinate channels), leaky
activations, no normalization anywhere — the gradient penalty needs
per-sample input gradients, which batch-coupled normalization would
pollute. Global average pooling plus a linear head produce one
unbounded score per image.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .model import CoordConv2d


class Critic(nn.Module):
    """P x P x 3 image -> unbounded real score."""

    def __init__(self, patch_size: int = 32, base_width: int = 32, use_coord: bool = True):
        super().__init__()
        self.patch_size = patch_size
        self.base_width = base_width
        widths = [base_width * 2**i for i in range(5)]
        blocks = [
            CoordConv2d(3, widths[0], 4, with_coords=use_coord, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            blocks += [nn.Conv2d(w_in, w_out, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(widths[-1], 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """Score a (B, 3, P, P) batch as a (B,) tensor."""
        if image.ndim != 4 or image.shape[1] != 3:
            raise ValueError(f"expected (B, 3, P, P) input, got {tuple(image.shape)}")
        if image.shape[-2] != self.patch_size or image.shape[-1] != self.patch_size:
            raise ValueError(f"expected {self.patch_size}px patches, got {tuple(image.shape[-2:])}")
        feat = self.blocks(image)
        pooled = feat.mean(dim=(-2, -1))
        return self.head(pooled).squeeze(-1)
