"""Denoiser networks.

One small UNet serves every diffusion model in the package: 2 down/up
levels at base width 32, cross-attention at the 8x8 bottleneck, optional
depth control branch. Conditioning slots:

  image_tokens  per-patch embedding sequence (B, L, d_img)
  text_tokens   prompt token embeddings (B, M, d_txt)
  depth         (B, 1, H, W) control input, all-zero = unconditioned

Passing None for a token slot drops that branch entirely (the zero branch
used for classifier-free guidance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / (half - 1))
        ang = t.float()[:, None] * freqs[None, :]
        return torch.cat([ang.sin(), ang.cos()], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Single cross-attention branch over flattened spatial positions.

    Returns the branch output only (no residual), so callers control how
    branches are fused.
    """

    def __init__(self, channels: int, ctx_dim: int, heads: int = 2):
        super().__init__()
        assert channels % heads == 0
        self.heads = heads
        self.scale = (channels // heads) ** -0.5
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        B, C, H, W = x.shape
        h = self.norm(x).flatten(2).transpose(1, 2)  # (B, HW, C)
        q = self.to_q(h)
        k = self.to_k(ctx)
        v = self.to_v(ctx)

        def split(t):
            return t.reshape(B, -1, self.heads, C // self.heads).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, H * W, C)
        out = self.to_out(out)
        return out.transpose(1, 2).reshape(B, C, H, W)


class DualCrossAttention(nn.Module):
    """Residual fusion of image-token and text-token attention branches.

    out = h + image_strength * CA_img(h, image_tokens) + CA_txt(h, text_tokens)

    A None token set (or image_strength == 0) skips its branch, which keeps
    the remaining path bit-identical to never having had the branch.
    """

    def __init__(self, channels: int, image_dim: Optional[int], text_dim: Optional[int], heads: int = 2):
        super().__init__()
        self.ca_image = CrossAttention(channels, image_dim, heads) if image_dim else None
        self.ca_text = CrossAttention(channels, text_dim, heads) if text_dim else None

    def forward(self, h, image_tokens=None, text_tokens=None, image_strength: float = 1.0,
                image_keep=None, text_keep=None):
        out = h
        if self.ca_image is not None and image_tokens is not None and image_strength != 0.0:
            branch = self.ca_image(h, image_tokens)
            if image_keep is not None:
                branch = branch * image_keep[:, None, None, None]
            out = out + image_strength * branch
        if self.ca_text is not None and text_tokens is not None:
            branch = self.ca_text(h, text_tokens)
            if text_keep is not None:
                branch = branch * text_keep[:, None, None, None]
            out = out + branch
        return out


class Downsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode="nearest"))


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


class ControlBranch(nn.Module):
    """Half-width copy of the encoder driven by (x_t, depth).

    Its per-level outputs pass through zero-initialized 1x1 convs before
    being added to the main encoder features, so an untrained branch is an
    exact no-op.
    """

    def __init__(self, in_channels: int, base: int, emb_dim: int):
        super().__init__()
        half = base // 2
        self.conv_in = nn.Conv2d(in_channels + 1, half, 3, padding=1)
        self.block1 = ResBlock(half, half, emb_dim)
        self.down1 = Downsample(half)
        self.block2 = ResBlock(half, half * 2, emb_dim)
        self.down2 = Downsample(half * 2)
        self.block3 = ResBlock(half * 2, half * 2, emb_dim)
        self.zero1 = zero_module(nn.Conv2d(half, base, 1))
        self.zero2 = zero_module(nn.Conv2d(half * 2, base * 2, 1))
        self.zero3 = zero_module(nn.Conv2d(half * 2, base * 2, 1))

    def forward(self, x, depth, emb):
        h = self.conv_in(torch.cat([x, depth], dim=1))
        h1 = self.block1(h, emb)
        h2 = self.block2(self.down1(h1), emb)
        h3 = self.block3(self.down2(h2), emb)
        return self.zero1(h1), self.zero2(h2), self.zero3(h3)


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int = 3
    out_channels: int = 3
    base: int = 32
    emb_dim: int = 128
    image_token_dim: Optional[int] = None
    text_token_dim: Optional[int] = None
    with_control: bool = False
    heads: int = 2

    def to_dict(self) -> dict:
        return asdict(self)


class UNet(nn.Module):
    """Epsilon-prediction UNet, 32x32 native (any power-of-two >= 8 works)."""

    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        c = config
        base, emb = c.base, c.emb_dim
        self.time_embed = nn.Sequential(
            SinusoidalTimeEmbedding(emb), nn.Linear(emb, emb), nn.SiLU(), nn.Linear(emb, emb)
        )
        self.conv_in = nn.Conv2d(c.in_channels, base, 3, padding=1)
        self.down1a = ResBlock(base, base, emb)
        self.down1b = ResBlock(base, base, emb)
        self.downsample1 = Downsample(base)
        self.down2a = ResBlock(base, base * 2, emb)
        self.down2b = ResBlock(base * 2, base * 2, emb)
        self.downsample2 = Downsample(base * 2)
        self.mid1 = ResBlock(base * 2, base * 2, emb)
        self.fuse = DualCrossAttention(base * 2, c.image_token_dim, c.text_token_dim, heads=c.heads)
        self.mid2 = ResBlock(base * 2, base * 2, emb)
        self.upsample2 = Upsample(base * 2)
        self.up2 = ResBlock(base * 4, base * 2, emb)
        self.upsample1 = Upsample(base * 2)
        self.up1 = ResBlock(base * 3, base, emb)
        self.norm_out = nn.GroupNorm(8, base)
        self.conv_out = nn.Conv2d(base, c.out_channels, 3, padding=1)
        self.control = ControlBranch(c.in_channels, base, emb) if c.with_control else None

    def forward(self, x, t, image_tokens=None, text_tokens=None, depth=None,
                image_strength: float = 1.0, image_keep=None, text_keep=None):
        emb = self.time_embed(t)
        ctrl = (0.0, 0.0, 0.0)
        if self.control is not None:
            if depth is None:
                raise ValueError("model was built with a control branch; pass depth (zeros = unconditioned)")
            ctrl = self.control(x, depth, emb)

        h1 = self.down1b(self.down1a(self.conv_in(x), emb), emb)
        h1 = h1 + ctrl[0] if self.control is not None else h1
        h2 = self.down2b(self.down2a(self.downsample1(h1), emb), emb)
        h2 = h2 + ctrl[1] if self.control is not None else h2
        h = self.downsample2(h2)
        h = h + ctrl[2] if self.control is not None else h
        h = self.mid1(h, emb)
        h = self.fuse(h, image_tokens, text_tokens, image_strength, image_keep, text_keep)
        h = self.mid2(h, emb)
        h = self.up2(torch.cat([self.upsample2(h), h2], dim=1), emb)
        h = self.up1(torch.cat([self.upsample1(h), h1], dim=1), emb)
        return self.conv_out(F.silu(self.norm_out(h)))
