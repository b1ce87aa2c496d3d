"""Compact U-Net shared by the character segmenters and the denoiser.

One class covers both uses: segmenters instantiate it plain (no time step, no
text context), the denoiser enables the sinusoidal time embedding and
cross-attention from feature maps to the encoded text sequence. Each down
stage halves the spatial size, so ``channel_mults`` of length 4 gives the
maximum 1/16 reduction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError


@dataclass
class UNetConfig:
    in_channels: int
    out_channels: int = 96
    base_width: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 4, 8)
    time_embed: bool = False
    context_dim: int | None = None
    attn_stages: tuple[int, ...] = ()
    num_heads: int = 4
    groups: int = 8

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if not self.channel_mults:
            raise ConfigurationError("need at least one stage")
        for i in self.attn_stages:
            if not 0 <= i < len(self.channel_mults):
                raise ConfigurationError(f"attention stage {i} out of range")
            if self.context_dim is None:
                raise ConfigurationError("attn_stages requires context_dim")
        for mult in self.channel_mults:
            ch = self.base_width * mult
            if ch % self.groups:
                raise ConfigurationError(f"stage width {ch} not divisible by groups")

    @property
    def num_stages(self) -> int:
        return len(self.channel_mults)

    @property
    def reduction(self) -> int:
        return 2 ** self.num_stages


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer time steps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    ).to(t.device)
    args = t.float().unsqueeze(-1) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, groups: int, time_dim: int | None):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm2 = nn.GroupNorm(groups, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch) if time_dim else None
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, time_emb: torch.Tensor | None = None) -> torch.Tensor:
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        if self.time_proj is not None and time_emb is not None:
            h = h + self.time_proj(time_emb).unsqueeze(-1).unsqueeze(-1)
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Residual attention from spatial features (queries) to a text sequence."""

    def __init__(self, channels: int, context_dim: int, num_heads: int):
        super().__init__()
        if channels % num_heads:
            raise ConfigurationError(
                f"attention width {channels} not divisible by {num_heads} heads"
            )
        self.norm = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(
            channels, num_heads, kdim=context_dim, vdim=context_dim, batch_first=True
        )

    def forward(
        self, x: torch.Tensor, context: torch.Tensor, context_mask: torch.Tensor | None
    ) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.flatten(2).transpose(1, 2)
        out, _ = self.attn(
            self.norm(seq), context, context, key_padding_mask=context_mask
        )
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class UNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        base = config.base_width
        widths = [base * m for m in config.channel_mults]
        time_dim = 4 * base if config.time_embed else None
        if time_dim:
            self.time_mlp = nn.Sequential(
                nn.Linear(base, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim)
            )
        self.stem = nn.Conv2d(config.in_channels, base, 3, padding=1)

        def attn_or_none(i, ch):
            if i in config.attn_stages:
                return CrossAttention(ch, config.context_dim, config.num_heads)
            return None

        self.down_blocks = nn.ModuleList()
        self.down_attns = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        prev = base
        for i, ch in enumerate(widths):
            self.down_blocks.append(ResBlock(prev, ch, config.groups, time_dim))
            self.down_attns.append(attn_or_none(i, ch) or nn.Identity())
            self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
            prev = ch

        self.mid_block1 = ResBlock(prev, prev, config.groups, time_dim)
        self.mid_attn = (
            CrossAttention(prev, config.context_dim, config.num_heads)
            if config.context_dim is not None
            else nn.Identity()
        )
        self.mid_block2 = ResBlock(prev, prev, config.groups, time_dim)

        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        self.up_attns = nn.ModuleList()
        for i in reversed(range(len(widths))):
            ch = widths[i]
            self.upsamples.append(nn.Conv2d(prev, prev, 3, padding=1))
            self.up_blocks.append(ResBlock(prev + ch, ch, config.groups, time_dim))
            self.up_attns.append(attn_or_none(i, ch) or nn.Identity())
            prev = ch

        self.head = nn.Sequential(
            nn.GroupNorm(min(config.groups, prev), prev),
            nn.SiLU(),
            nn.Conv2d(prev, config.out_channels, 3, padding=1),
        )

    def forward(
        self,
        x: torch.Tensor,
        t: torch.Tensor | None = None,
        context: torch.Tensor | None = None,
        context_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        cfg = self.config
        if x.shape[-1] % cfg.reduction or x.shape[-2] % cfg.reduction:
            raise ConfigurationError(
                f"spatial size {tuple(x.shape[-2:])} not divisible by {cfg.reduction}"
            )
        if cfg.time_embed:
            if t is None:
                raise ConfigurationError("model was built with a time embedding; pass t")
            time_emb = self.time_mlp(timestep_embedding(t, cfg.base_width))
        else:
            time_emb = None
        if cfg.context_dim is not None and context is None:
            raise ConfigurationError("model expects a text context")

        def run_attn(layer, h):
            if isinstance(layer, CrossAttention):
                return layer(h, context, context_mask)
            return h

        h = self.stem(x)
        skips = []
        for block, attn, down in zip(self.down_blocks, self.down_attns, self.downsamples):
            h = run_attn(attn, block(h, time_emb))
            skips.append(h)
            h = down(h)
        h = self.mid_block2(run_attn(self.mid_attn, self.mid_block1(h, time_emb)), time_emb)
        for up, block, attn in zip(self.upsamples, self.up_blocks, self.up_attns):
            h = up(nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
            h = run_attn(attn, block(torch.cat([h, skips.pop()], dim=1), time_emb))
        return self.head(h)
