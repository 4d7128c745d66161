"""The stroke painter network.

Three coordinate-aware convolutional encoders embed the canvas, the
target, and their signed difference into (P/4) x (P/4) feature grids. A
transformer encoder fuses the three token streams; the decoder turns the
difference-image tokens into a fixed number of stroke queries and
cross-attends into the fused stream. Two MLP heads emit stroke
parameters (squashed into their valid domains) and one unbounded
confidence logit per stroke: at inference a stroke is drawn iff its
logit is >= 0.

Ablation switches: ``use_coord=False`` drops the coordinate channels
from every first conv layer; ``use_differential=False`` feeds a zero map
in place of the difference features and swaps the dynamic queries for a
learned constant embedding.
"""

from __future__ import annotations

import torch
import torch.nn as nn

THETA_SLOT = 4


def coord_channels(h: int, w: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """A (2, h, w) grid of pixel coordinates normalized to [-1, 1].

    Channel 0 is the x coordinate (varies along columns), channel 1 the y
    coordinate (along rows); a degenerate 1-wide axis maps to 0.
    """
    xs = torch.linspace(-1, 1, w, dtype=dtype, device=device) if w > 1 else torch.zeros(1, dtype=dtype, device=device)
    ys = torch.linspace(-1, 1, h, dtype=dtype, device=device) if h > 1 else torch.zeros(1, dtype=dtype, device=device)
    gx = xs.view(1, -1).expand(h, w)
    gy = ys.view(-1, 1).expand(h, w)
    return torch.stack([gx, gy], dim=0)


class CoordConv2d(nn.Module):
    """Conv2d that sees two extra coordinate channels (optional)."""

    def __init__(self, in_channels, out_channels, kernel_size, with_coords=True, **kwargs):
        super().__init__()
        self.with_coords = with_coords
        extra = 2 if with_coords else 0
        self.conv = nn.Conv2d(in_channels + extra, out_channels, kernel_size, **kwargs)

    def forward(self, x):
        if self.with_coords:
            grid = coord_channels(x.shape[-2], x.shape[-1], dtype=x.dtype, device=x.device)
            x = torch.cat([x, grid.expand(x.shape[0], 2, -1, -1)], dim=1)
        return self.conv(x)


class LocalEncoder(nn.Module):
    """Image patch -> (width, P/4, P/4) feature grid via two stride-2 stages."""

    def __init__(self, width: int, use_coord: bool = True):
        super().__init__()
        self.first = CoordConv2d(3, width // 2, 3, with_coords=use_coord, stride=2, padding=1)
        self.second = nn.Conv2d(width // 2, width, 3, stride=2, padding=1)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, P, P) input, got {tuple(x.shape)}")
        if x.shape[-1] != x.shape[-2] or x.shape[-1] % 4 != 0:
            raise ValueError(f"patch side must be square and divisible by 4, got {tuple(x.shape[-2:])}")
        return self.act(self.second(self.act(self.first(x))))


class EncoderBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, width: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, ff_mult * width), nn.ReLU(inplace=True), nn.Linear(ff_mult * width, width))

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.ff(self.norm2(x))


class DecoderBlock(nn.Module):
    """Pre-norm block: query self-attention, cross-attention into the
    fused stream, feed-forward. Returns per-head cross-attention weights.
    """

    def __init__(self, width: int, heads: int, ff_mult: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(width)
        self.self_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(width)
        self.cross_attn = nn.MultiheadAttention(width, heads, batch_first=True)
        self.norm3 = nn.LayerNorm(width)
        self.ff = nn.Sequential(nn.Linear(width, ff_mult * width), nn.ReLU(inplace=True), nn.Linear(ff_mult * width, width))

    def forward(self, q, memory):
        h = self.norm1(q)
        q = q + self.self_attn(h, h, h, need_weights=False)[0]
        out, weights = self.cross_attn(
            self.norm2(q), memory, memory, need_weights=True, average_attn_weights=False
        )
        q = q + out
        q = q + self.ff(self.norm3(q))
        return q, weights  # weights: (B, heads, N, tokens)


def squash_stroke_params(raw: torch.Tensor) -> torch.Tensor:
    """Map raw head outputs into valid stroke-parameter domains.

    Sigmoid for position, size and color; rotation wraps onto [0, 1) so
    any real logit lands on the periodic domain without saturating. Sizes
    keep a tiny positive floor: the sigmoid may underflow to exactly 0 in
    float32, which the rasterizer rejects.
    """
    squashed = torch.sigmoid(raw)
    sizes = squashed[..., 2:THETA_SLOT].clamp_min(1e-6)
    theta = torch.remainder(raw[..., THETA_SLOT], 1.0)
    return torch.cat(
        [squashed[..., :2], sizes, theta.unsqueeze(-1), squashed[..., THETA_SLOT + 1 :]], dim=-1
    )


class Painter(nn.Module):
    """Canvas + target -> N stroke parameter vectors + confidence logits."""

    def __init__(
        self,
        patch_size: int = 32,
        max_strokes: int = 8,
        width: int = 64,
        enc_layers: int = 2,
        dec_layers: int = 2,
        heads: int = 4,
        use_coord: bool = True,
        use_differential: bool = True,
    ):
        super().__init__()
        if patch_size % 4 != 0:
            raise ValueError("patch_size must be divisible by 4")
        self.patch_size = patch_size
        self.max_strokes = max_strokes
        self.width = width
        self.use_coord = use_coord
        self.use_differential = use_differential
        self.grid_side = patch_size // 4
        self.tokens_per_map = self.grid_side**2

        self.enc_canvas = LocalEncoder(width, use_coord)
        self.enc_target = LocalEncoder(width, use_coord)
        self.enc_diff = LocalEncoder(width, use_coord)

        self.pos_embed = nn.Parameter(torch.empty(1, 3 * self.tokens_per_map, width))
        nn.init.normal_(self.pos_embed, std=0.02)

        self.encoder = nn.ModuleList(EncoderBlock(width, heads) for _ in range(enc_layers))
        self.encoder_norm = nn.LayerNorm(width)

        if use_differential:
            # reduce the (P/4)^2 difference tokens to N dynamic queries
            self.query_proj = nn.Linear(self.tokens_per_map, max_strokes)
        else:
            self.query_embed = nn.Parameter(torch.empty(1, max_strokes, width))
            nn.init.normal_(self.query_embed, std=0.02)

        self.decoder = nn.ModuleList(DecoderBlock(width, heads) for _ in range(dec_layers))
        self.decoder_norm = nn.LayerNorm(width)

        self.param_head = nn.Sequential(nn.Linear(width, width), nn.ReLU(inplace=True), nn.Linear(width, 8))
        self.conf_head = nn.Sequential(nn.Linear(width, width), nn.ReLU(inplace=True), nn.Linear(width, 1))

    # --- architecture pieces, exposed for direct testing ---

    def _tokens(self, fmap: torch.Tensor) -> torch.Tensor:
        # (B, C, p, p) -> (B, p*p, C), row-major spatial order
        return fmap.flatten(2).transpose(1, 2)

    def fuse(self, f_canvas: torch.Tensor, f_target: torch.Tensor, f_diff: torch.Tensor) -> torch.Tensor:
        """Concatenate the three feature grids along the token axis and run
        the encoder stack; output length is exactly 3 * (P/4)^2."""
        if f_canvas.shape != f_target.shape or f_canvas.shape != f_diff.shape:
            raise ValueError("feature maps must share a shape")
        tok = torch.cat([self._tokens(f_canvas), self._tokens(f_target), self._tokens(f_diff)], dim=1)
        tok = tok + self.pos_embed
        for block in self.encoder:
            tok = block(tok)
        return self.encoder_norm(tok)

    def make_queries(self, f_diff: torch.Tensor) -> torch.Tensor:
        """N query tokens: a learned linear reduction of the difference
        tokens, or the constant embedding when the ablation is active."""
        if not self.use_differential:
            return self.query_embed.expand(f_diff.shape[0], -1, -1)
        dq = self._tokens(f_diff)  # (B, T, C)
        return self.query_proj(dq.transpose(1, 2)).transpose(1, 2)  # (B, N, C)

    def decode(self, queries: torch.Tensor, fused: torch.Tensor):
        """Run the decoder stack. Returns (tokens, first-layer per-head
        cross-attention weights of shape (B, heads, N, 3T))."""
        memory = fused + self.pos_embed
        first_attn = None
        q = queries
        for block in self.decoder:
            q, weights = block(q, memory)
            if first_attn is None:
                first_attn = weights
        return self.decoder_norm(q), first_attn

    def predict_strokes(self, tokens: torch.Tensor):
        """Apply both heads: (B, N, 8) squashed params, (B, N) logits."""
        params = squash_stroke_params(self.param_head(tokens))
        conf = self.conf_head(tokens).squeeze(-1)
        return params, conf

    # --- full passes ---

    def forward(self, canvas: torch.Tensor, target: torch.Tensor, return_attention: bool = False):
        if canvas.shape != target.shape:
            raise ValueError("canvas and target must share a shape")
        if canvas.shape[-1] != self.patch_size:
            raise ValueError(f"expected {self.patch_size}px patches, got {canvas.shape[-1]}")
        diff = target - canvas
        if not self.use_differential:
            diff = torch.zeros_like(diff)
        f_c = self.enc_canvas(canvas)
        f_t = self.enc_target(target)
        f_d = self.enc_diff(diff)
        fused = self.fuse(f_c, f_t, f_d)
        tokens, attn = self.decode(self.make_queries(f_d), fused)
        params, conf = self.predict_strokes(tokens)
        if return_attention:
            return params, conf, attn
        return params, conf

    @torch.no_grad()
    def attention_maps(self, canvas: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """First-decoder-layer cross-attention, restricted to the
        difference-feature keys and renormalized, reshaped to the key
        grid: (B, N, P/4, P/4), head-averaged. Each map sums to 1.
        """
        _, _, attn = self.forward(canvas, target, return_attention=True)
        w = attn.mean(dim=1)  # (B, N, 3T)
        t = self.tokens_per_map
        d_block = w[..., 2 * t : 3 * t]
        d_block = d_block / d_block.sum(dim=-1, keepdim=True).clamp_min(1e-12)
        return d_block.reshape(w.shape[0], w.shape[1], self.grid_side, self.grid_side)

    def hyperparams(self) -> dict:
        """The architecture knobs a checkpoint manifest must pin down."""
        return {
            "patch_size": self.patch_size,
            "max_strokes": self.max_strokes,
            "width": self.width,
            "enc_layers": len(self.encoder),
            "dec_layers": len(self.decoder),
            "heads": self.decoder[0].cross_attn.num_heads,
            "use_coord": self.use_coord,
            "use_differential": self.use_differential,
        }


def accepted(confidences: torch.Tensor) -> torch.Tensor:
    """Inference validity rule: draw a stroke iff its logit is >= 0."""
    return confidences >= 0
