"""Scale-conditioned neural operator producing the diffusion prior.

Pipeline: EDSR-style encoder at LR resolution -> nearest-neighbour lift onto
the target grid (with relative offsets and cell size) -> stacked Galerkin
attention layers -> per-pixel MLP to RGB.

Latent fields are carried as ``(B, n_f, d_r)`` tensors in row-vector
convention, i.e. queries are ``phi @ Wq``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = [
    "OperatorConfig",
    "LatentField",
    "Encoder",
    "Lift",
    "GalerkinAttention",
    "OperatorLayer",
    "NeuralOperator",
    "make_coord",
    "target_size",
    "softmax_kernel_integral",
    "galerkin_attention",
]


@dataclass
class OperatorConfig:
    d_r: int = 64
    num_layers: int = 2
    encoder_blocks: int = 8
    encoder_channels: int = 64
    M: float = 8.0
    head_hidden: int = 256
    res_scale: float = 1.0

    def __post_init__(self):
        if self.d_r < 1 or self.num_layers < 1:
            raise ValueError("d_r and num_layers must be >= 1")
        if not self.M > 1:
            raise ValueError(f"M must exceed 1, got {self.M}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentField:
    values: torch.Tensor  # (B, n_f, d_r)
    coords: torch.Tensor  # (n_f, 2) cell centres in [-1, 1], (row, col) order
    size: tuple[int, int]

    @property
    def n_f(self) -> int:
        return self.size[0] * self.size[1]

    @property
    def cell_size(self) -> tuple[float, float]:
        return 2.0 / self.size[0], 2.0 / self.size[1]


def target_size(lr_size: int, s: float) -> int:
    """Round-half-up of ``lr_size * s``."""
    return int(math.floor(lr_size * s + 0.5))


def _centres(n: int, dtype=torch.float32) -> torch.Tensor:
    return -1.0 + (2.0 * torch.arange(n, dtype=dtype) + 1.0) / n


def make_coord(h: int, w: int, dtype=torch.float32) -> torch.Tensor:
    """Cell-centre coordinates of an ``h x w`` grid, shape ``(h*w, 2)``."""
    ys, xs = torch.meshgrid(_centres(h, dtype), _centres(w, dtype), indexing="ij")
    return torch.stack([ys, xs], dim=-1).reshape(-1, 2)


class ResBlock(nn.Module):
    def __init__(self, channels: int, res_scale: float = 1.0):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.res_scale = res_scale

    def forward(self, x):
        return x + self.res_scale * self.conv2(F.relu(self.conv1(x)))


class Encoder(nn.Module):
    """EDSR-baseline body without the upsampling tail."""

    def __init__(self, blocks: int = 8, channels: int = 64, res_scale: float = 1.0, in_channels: int = 3):
        super().__init__()
        self.head = nn.Conv2d(in_channels, channels, 3, padding=1)
        self.body = nn.Sequential(*[ResBlock(channels, res_scale) for _ in range(blocks)])
        self.tail = nn.Conv2d(channels, channels, 3, padding=1)
        self.out_channels = channels

    def forward(self, x):
        h = self.head(x)
        return h + self.tail(self.body(h))


class Lift(nn.Module):
    """Nearest-neighbour feature lookup onto the target grid plus a linear map to d_r."""

    def __init__(self, in_channels: int, d_r: int):
        super().__init__()
        self.proj = nn.Linear(in_channels + 4, d_r)

    def forward(self, feat: torch.Tensor, size: tuple[int, int]) -> LatentField:
        b, c, h_lr, w_lr = feat.shape
        h, w = size
        dtype = feat.dtype
        cy, cx = _centres(h, dtype), _centres(w, dtype)
        iy = torch.clamp(torch.floor((cy + 1.0) * h_lr / 2.0).long(), 0, h_lr - 1)
        ix = torch.clamp(torch.floor((cx + 1.0) * w_lr / 2.0).long(), 0, w_lr - 1)
        picked = feat[:, :, iy][:, :, :, ix]  # (B, C, h, w)
        # offsets and cell size in units of LR pixels
        ry = (cy - _centres(h_lr, dtype)[iy]) * h_lr / 2.0
        rx = (cx - _centres(w_lr, dtype)[ix]) * w_lr / 2.0
        rel = torch.stack(torch.meshgrid(ry, rx, indexing="ij"), dim=0)
        cell = torch.tensor([h_lr / h, w_lr / w], dtype=dtype).view(2, 1, 1).expand(2, h, w)
        extra = torch.cat([rel, cell], dim=0).unsqueeze(0).expand(b, 4, h, w)
        inp = torch.cat([picked, extra], dim=1).flatten(2).transpose(1, 2)
        return LatentField(self.proj(inp), make_coord(h, w, dtype), (h, w))


def softmax_kernel_integral(phi, wq, wk, wv):
    """Dense softmax kernel sum with normalisation over the query index.

    For each key ``i`` the weights ``exp(<q_j, k_i>/sqrt(d))`` are normalised
    over all points ``j``, then applied to ``v_i = phi_i @ Wv``.  Quadratic in
    ``n_f``; intended for small grids.
    """
    d = phi.shape[-1]
    q, k, v = phi @ wq, phi @ wk, phi @ wv
    scores = q @ k.transpose(-1, -2) / math.sqrt(d)  # [xi, i]
    weights = torch.softmax(scores, dim=-2)
    return weights @ v


def galerkin_attention(phi, wq, wk, wv, k_norm=None, v_norm=None):
    """``Q (K~^T V~) / n_f`` evaluated in linear-cost order."""
    n = phi.shape[-2]
    q, k, v = phi @ wq, phi @ wk, phi @ wv
    if k_norm is not None:
        k = k_norm(k)
    if v_norm is not None:
        v = v_norm(v)
    return q @ (k.transpose(-1, -2) @ v) / n


class GalerkinAttention(nn.Module):
    def __init__(self, d_r: int):
        super().__init__()
        scale = 1.0 / math.sqrt(d_r)
        self.wq = nn.Parameter(torch.randn(d_r, d_r) * scale)
        self.wk = nn.Parameter(torch.randn(d_r, d_r) * scale)
        self.wv = nn.Parameter(torch.randn(d_r, d_r) * scale)
        self.k_norm = nn.LayerNorm(d_r)
        self.v_norm = nn.LayerNorm(d_r)

    def forward(self, phi):
        return galerkin_attention(phi, self.wq, self.wk, self.wv, self.k_norm, self.v_norm)


class OperatorLayer(nn.Module):
    """phi + FFN(attention(phi) + phi)."""

    def __init__(self, d_r: int):
        super().__init__()
        self.attn = GalerkinAttention(d_r)
        self.ffn = nn.Sequential(nn.Linear(d_r, d_r), nn.GELU(), nn.Linear(d_r, d_r))

    def forward(self, phi):
        return phi + self.ffn(self.attn(phi) + phi)


class NeuralOperator(nn.Module):
    def __init__(self, cfg: OperatorConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or OperatorConfig()
        self.encoder = Encoder(cfg.encoder_blocks, cfg.encoder_channels, cfg.res_scale)
        self.lift = Lift(cfg.encoder_channels, cfg.d_r)
        self.layers = nn.ModuleList([OperatorLayer(cfg.d_r) for _ in range(cfg.num_layers)])
        self.head = nn.Sequential(nn.Linear(cfg.d_r, cfg.head_hidden), nn.GELU(), nn.Linear(cfg.head_hidden, 3))

    def encode(self, x):
        return self.encoder(x)

    def output_size(self, x, s: float, size=None) -> tuple[int, int]:
        if size is not None:
            h, w = size
            if abs(h - x.shape[-2] * s) > 1 or abs(w - x.shape[-1] * s) > 1:
                raise ValueError(f"target size {tuple(size)} inconsistent with scale {s}")
            return int(h), int(w)
        return target_size(x.shape[-2], s), target_size(x.shape[-1], s)

    def forward(self, x, s: float, size=None, allow_ood: bool = False):
        """Map LR images ``(B, 3, h, w)`` to priors at ``round(h*s) x round(w*s)``.

        ``allow_ood`` admits scales above ``M`` (evaluation-time extrapolation).
        """
        if not s > 1.0 or (s > self.cfg.M and not allow_ood):
            raise ValueError(f"scale {s} outside (1, {self.cfg.M}]")
        h, w = self.output_size(x, s, size)
        field = self.lift(self.encode(x), (h, w))
        phi = field.values
        for layer in self.layers:
            phi = layer(phi)
        out = self.head(phi)
        return out.transpose(1, 2).reshape(x.shape[0], 3, h, w)
