"""Noise-prediction U-Net conditioned on a prior image and a continuous noise level."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["DenoiserConfig", "GammaEmbedding", "UNet", "embed_gamma_features", "predict_noise"]


@dataclass
class DenoiserConfig:
    base_channels: int = 32
    depth: int = 3
    channel_mult: tuple[int, ...] | None = None
    dropout: float = 0.2
    gamma_embed_dim: int = 64
    cond_channels: int = 3

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.channel_mult is None:
            self.channel_mult = tuple(min(2**i, 2) for i in range(self.depth + 1))
        self.channel_mult = tuple(self.channel_mult)
        if len(self.channel_mult) != self.depth + 1:
            raise ValueError("channel_mult needs depth + 1 entries")
        if self.gamma_embed_dim % 2:
            raise ValueError("gamma_embed_dim must be even")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channel_mult"] = list(self.channel_mult)
        return d


def embed_gamma_features(gamma: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of log(gamma) at geometrically spaced frequencies."""
    gamma = torch.as_tensor(gamma)
    if torch.any(gamma <= 0) or torch.any(gamma > 1):
        raise ValueError("gamma must lie in (0, 1]")
    half = dim // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(1000.0), half, dtype=gamma.dtype))
    arg = torch.log(gamma).reshape(-1, 1) * freqs
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=-1)


class GammaEmbedding(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, gamma):
        return self.mlp(embed_gamma_features(gamma, self.dim).to(self.mlp[0].weight.dtype))


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, ch), ch)


class Dropout(nn.Module):
    """Dropout whose mask can be drawn from an explicit generator."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x, generator=None):
        if not self.training or self.p == 0.0:
            return x
        keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, emb_dim: int, dropout: float):
        super().__init__()
        self.norm1 = _norm(cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb = nn.Linear(emb_dim, cout)
        self.norm2 = _norm(cout)
        self.dropout = Dropout(dropout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb, generator=None):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb(emb)[:, :, None, None]
        h = self.dropout(F.silu(self.norm2(h)), generator)
        return self.skip(x) + self.conv2(h)


class UNet(nn.Module):
    def __init__(self, cfg: DenoiserConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or DenoiserConfig()
        chs = [cfg.base_channels * m for m in cfg.channel_mult]
        emb = cfg.gamma_embed_dim
        self.gamma_embed = GammaEmbedding(emb)
        self.inp = nn.Conv2d(cfg.cond_channels + 3, chs[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        for i in range(cfg.depth):
            self.down_blocks.append(ResBlock(chs[i], chs[i], emb, cfg.dropout))
            self.downsamples.append(nn.Conv2d(chs[i], chs[i + 1], 3, stride=2, padding=1))
        self.mid = ResBlock(chs[-1], chs[-1], emb, cfg.dropout)
        self.upsamples = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for i in reversed(range(cfg.depth)):
            self.upsamples.append(nn.Conv2d(chs[i + 1], chs[i], 3, padding=1))
            self.up_blocks.append(ResBlock(2 * chs[i], chs[i], emb, cfg.dropout))
        self.out_norm = _norm(chs[0])
        self.out = nn.Conv2d(chs[0], 3, 3, padding=1)

    def forward(self, y, zt, gamma, generator=None):
        if y.shape[-2:] != zt.shape[-2:] or y.shape[0] != zt.shape[0]:
            raise ValueError(f"prior {tuple(y.shape)} and noisy image {tuple(zt.shape)} mismatch")
        if y.shape[1] != self.cfg.cond_channels:
            raise ValueError(f"expected {self.cfg.cond_channels} prior channels, got {y.shape[1]}")
        k = 2**self.cfg.depth
        if zt.shape[-2] % k or zt.shape[-1] % k:
            raise ValueError(f"spatial size {tuple(zt.shape[-2:])} not divisible by {k}")
        gamma = torch.as_tensor(gamma, dtype=zt.dtype).reshape(-1).expand(zt.shape[0])
        emb = self.gamma_embed(gamma)
        h = self.inp(torch.cat([y, zt], dim=1))
        skips = []
        for block, down in zip(self.down_blocks, self.downsamples):
            h = block(h, emb, generator)
            skips.append(h)
            h = down(h)
        h = self.mid(h, emb, generator)
        for up, block in zip(self.upsamples, self.up_blocks):
            h = up(F.interpolate(h, scale_factor=2, mode="nearest"))
            h = block(torch.cat([h, skips.pop()], dim=1), emb, generator)
        return self.out(F.silu(self.out_norm(h)))


def predict_noise(model: UNet, y, zt, gamma, mode: str = "eval", generator=None):
    """Evaluate the denoiser in ``train`` (dropout on) or ``eval`` mode."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    was_training = model.training
    model.train(mode == "train")
    try:
        return model(y, zt, gamma, generator if mode == "train" else None)
    finally:
        model.train(was_training)
