"""Noise-prediction network: a small U-Net with sinusoidal step embedding.

The architecture scales from the 32x32 working configuration down to a
few-parameter probe net on 4x4 inputs, which the finite-difference
gradient tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass(frozen=True)
class ArchSpec:
    """Descriptor of the denoiser architecture; stored in checkpoints."""

    resolution: int = 32
    channels: int = 3
    base_width: int = 32
    channel_mults: tuple[int, ...] = (1, 2)
    emb_dim: int = 64
    num_blocks: int = 1
    zero_init_out: bool = True

    def widths(self) -> list[int]:
        return [self.base_width * m for m in self.channel_mults]


def _groups_for(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0 and channels >= 2 * g:
            return g
    return 1


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Classic transformer-style embedding of integer diffusion steps."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / max(half - 1, 1)
    )
    args = t[:, None].to(freqs.dtype) * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, emb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups_for(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups_for(out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class NoisePredictor(nn.Module):
    """Predicts the noise component of a diffused image.

    Input and output share the same (B, C, H, W) shape.  ``t`` is the
    absolute diffusion step (1-based); accepts a python int or a (B,)
    tensor for per-sample steps.
    """

    def __init__(self, spec: ArchSpec = ArchSpec()):
        super().__init__()
        self.spec = spec
        widths = spec.widths()
        emb_dim = spec.emb_dim

        self.emb_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim * 2), nn.SiLU(), nn.Linear(emb_dim * 2, emb_dim)
        )
        self.stem = nn.Conv2d(spec.channels, widths[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i, w in enumerate(widths):
            in_w = widths[max(i - 1, 0)]
            blocks = nn.ModuleList(
                [ResBlock(in_w if j == 0 else w, w, emb_dim) for j in range(spec.num_blocks)]
            )
            self.down_blocks.append(blocks)
            if i < len(widths) - 1:
                self.downsamples.append(nn.Conv2d(w, w, 3, stride=2, padding=1))

        self.mid = ResBlock(widths[-1], widths[-1], emb_dim)

        self.up_blocks = nn.ModuleList()
        self.upsample_convs = nn.ModuleList()
        for i in reversed(range(len(widths))):
            w = widths[i]
            out_w = widths[max(i - 1, 0)]
            # concat of the skip connection doubles the input width
            blocks = nn.ModuleList(
                [ResBlock(2 * w if j == 0 else out_w, out_w, emb_dim) for j in range(spec.num_blocks)]
            )
            self.up_blocks.append(blocks)
            if i > 0:
                self.upsample_convs.append(nn.Conv2d(out_w, out_w, 3, padding=1))

        self.out_norm = nn.GroupNorm(_groups_for(widths[0]), widths[0])
        self.out_conv = nn.Conv2d(widths[0], spec.channels, 3, padding=1)
        if spec.zero_init_out:
            nn.init.zeros_(self.out_conv.weight)
            nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, t) -> torch.Tensor:
        if x.shape[-1] != self.spec.resolution or x.shape[-2] != self.spec.resolution:
            raise ValueError(
                f"input resolution {tuple(x.shape[-2:])} does not match "
                f"configured {self.spec.resolution}"
            )
        if x.shape[-3] != self.spec.channels:
            raise ValueError(f"expected {self.spec.channels} channels, got {x.shape[-3]}")
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)
        else:
            t = t.to(dtype=x.dtype, device=x.device)
        emb = self.emb_mlp(sinusoidal_embedding(t, self.spec.emb_dim))

        h = self.stem(x)
        skips = []
        for i, blocks in enumerate(self.down_blocks):
            for blk in blocks:
                h = blk(h, emb)
            skips.append(h)
            if i < len(self.downsamples):
                h = self.downsamples[i](h)

        h = self.mid(h, emb)

        for i, blocks in enumerate(self.up_blocks):
            skip = skips[-(i + 1)]
            if h.shape[-2:] != skip.shape[-2:]:
                h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
                h = self.upsample_convs[i - 1](h)
            h = torch.cat([h, skip], dim=1)
            for blk in blocks:
                h = blk(h, emb)

        return self.out_conv(F.silu(self.out_norm(h)))
