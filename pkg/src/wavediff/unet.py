"""Noise-prediction UNet.

A standard diffusion UNet (residual blocks, sinusoidal time conditioning,
self-attention at configurable stages) adapted to the very wide aspect
ratios used here: height stops halving once it reaches 1 while width keeps
halving, so both 3x16x256 and 3x1x512 inputs flow through the same code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class UNetConfig:
    stage_channels: tuple[int, ...] = (128, 128, 256, 256, 512)
    blocks_per_stage: int = 2
    attention_stages: tuple[int, ...] = (3,)
    in_shape: tuple[int, int, int] = (3, 16, 256)
    time_embed_dim: int | None = None
    # Absolute position matters on these images (column = time of day,
    # row = scale), so two fixed coordinate planes are appended to the
    # input by default.
    coord_channels: bool = True

    def check(self) -> None:
        if len(self.stage_channels) < 2:
            raise ConfigError("need at least two stages")
        if any(s < 0 or s >= len(self.stage_channels) for s in self.attention_stages):
            raise ConfigError(f"attention stage out of range: {self.attention_stages}")
        _, _, width = self.in_shape
        if width % 2 ** (len(self.stage_channels) - 1) != 0:
            raise ConfigError(
                f"width {width} cannot be halved {len(self.stage_channels) - 1} times"
            )

    def to_dict(self) -> dict:
        return {
            "stage_channels": list(self.stage_channels),
            "blocks_per_stage": self.blocks_per_stage,
            "attention_stages": list(self.attention_stages),
            "in_shape": list(self.in_shape),
            "time_embed_dim": self.time_embed_dim,
            "coord_channels": self.coord_channels,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "UNetConfig":
        return cls(
            stage_channels=tuple(doc["stage_channels"]),
            blocks_per_stage=doc["blocks_per_stage"],
            attention_stages=tuple(doc["attention_stages"]),
            in_shape=tuple(doc["in_shape"]),
            time_embed_dim=doc.get("time_embed_dim"),
            coord_channels=doc.get("coord_channels", True),
        )


PAPER_UNET = UNetConfig()
DESK_UNET = UNetConfig(
    stage_channels=(32, 64, 128),
    blocks_per_stage=1,
    attention_stages=(2,),
)


def _groups(channels: int) -> int:
    return 8 if channels % 8 == 0 else math.gcd(channels, 8)


def _zero_init(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class SinusoidalTimeEmbedding(nn.Module):
    def __init__(self, dim: int, max_period: float = 10000.0):
        super().__init__()
        self.dim = dim
        self.max_period = max_period

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.dim // 2
        freqs = torch.exp(
            -math.log(self.max_period)
            * torch.arange(half, dtype=t.dtype, device=t.device)
            / half
        )
        args = t[:, None] * freqs[None, :]
        return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(_groups(out_ch), out_ch)
        self.conv2 = _zero_init(nn.Conv2d(out_ch, out_ch, 3, padding=1))
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(emb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention2d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.heads = 4 if channels % 4 == 0 and channels >= 64 else 1
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = _zero_init(nn.Conv2d(channels, channels, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        qkv = self.qkv(self.norm(x))
        q, k, v = qkv.reshape(b, 3, self.heads, c // self.heads, h * w).unbind(1)
        attn = torch.softmax(q.transpose(-2, -1) @ k / math.sqrt(c // self.heads), dim=-1)
        out = (v @ attn.transpose(-2, -1)).reshape(b, c, h, w)
        return x + self.proj(out)


class Downsample(nn.Module):
    """Halve width always; halve height only while it is above 1."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        stride = (2 if x.shape[-2] > 1 else 1, 2)
        return F.conv2d(x, self.conv.weight, self.conv.bias, stride=stride, padding=1)


class Upsample(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
        return self.conv(F.interpolate(x, size=size, mode="nearest"))


class NoiseUNet(nn.Module):
    """epsilon(x_t, t): same shape out as in, conditioned on the step index."""

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        cfg.check()
        self.cfg = cfg
        chans = cfg.stage_channels
        in_ch = cfg.in_shape[0]
        time_dim = cfg.time_embed_dim or 4 * chans[0]

        self.time_embed = nn.Sequential(
            SinusoidalTimeEmbedding(chans[0]),
            nn.Linear(chans[0], time_dim),
            nn.SiLU(),
            nn.Linear(time_dim, time_dim),
        )
        conv_in_ch = in_ch + (2 if cfg.coord_channels else 0)
        self.in_conv = nn.Conv2d(conv_in_ch, chans[0], 3, padding=1)

        self.down_blocks = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        skip_chans = [chans[0]]
        ch = chans[0]
        for i, out in enumerate(chans):
            blocks = nn.ModuleList()
            attns = nn.ModuleList()
            for _ in range(cfg.blocks_per_stage):
                blocks.append(ResidualBlock(ch, out, time_dim))
                attns.append(SelfAttention2d(out) if i in cfg.attention_stages else nn.Identity())
                ch = out
                skip_chans.append(ch)
            self.down_blocks.append(blocks)
            self.down_attn.append(attns)
            if i < len(chans) - 1:
                self.downsamples.append(Downsample(ch))
                skip_chans.append(ch)

        self.mid_block1 = ResidualBlock(ch, ch, time_dim)
        self.mid_attn = SelfAttention2d(ch)
        self.mid_block2 = ResidualBlock(ch, ch, time_dim)

        self.up_blocks = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for i, out in reversed(list(enumerate(chans))):
            blocks = nn.ModuleList()
            attns = nn.ModuleList()
            for _ in range(cfg.blocks_per_stage + 1):
                blocks.append(ResidualBlock(ch + skip_chans.pop(), out, time_dim))
                attns.append(SelfAttention2d(out) if i in cfg.attention_stages else nn.Identity())
                ch = out
            self.up_blocks.append(blocks)
            self.up_attn.append(attns)
            if i > 0:
                self.upsamples.append(Upsample(ch))

        self.out_norm = nn.GroupNorm(_groups(ch), ch)
        self.out_conv = _zero_init(nn.Conv2d(ch, in_ch, 3, padding=1))

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if t.ndim == 0:
            t = t.expand(x.shape[0])
        emb = self.time_embed(t.to(x.dtype))

        if self.cfg.coord_channels:
            b, _, height, width = x.shape
            cols = torch.linspace(-1.0, 1.0, width, dtype=x.dtype, device=x.device)
            rows = (torch.linspace(-1.0, 1.0, height, dtype=x.dtype, device=x.device)
                    if height > 1 else torch.zeros(1, dtype=x.dtype, device=x.device))
            x = torch.cat([
                x,
                cols.view(1, 1, 1, width).expand(b, 1, height, width),
                rows.view(1, 1, height, 1).expand(b, 1, height, width),
            ], dim=1)
        h = self.in_conv(x)
        skips = [h]
        sizes = []
        for i, (blocks, attns) in enumerate(zip(self.down_blocks, self.down_attn)):
            for block, attn in zip(blocks, attns):
                h = attn(block(h, emb))
                skips.append(h)
            if i < len(self.downsamples):
                sizes.append(h.shape[-2:])
                h = self.downsamples[i](h)
                skips.append(h)

        h = self.mid_block2(self.mid_attn(self.mid_block1(h, emb)), emb)

        for i, (blocks, attns) in enumerate(zip(self.up_blocks, self.up_attn)):
            for block, attn in zip(blocks, attns):
                h = attn(block(torch.cat([h, skips.pop()], dim=1), emb))
            if i < len(self.upsamples):
                h = self.upsamples[i](h, sizes.pop())

        return self.out_conv(F.silu(self.out_norm(h)))
