"""PSNR and SSIM on images mapped to the [0, 1] range."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PSNR_CAP = 100.0


def _to_unit(x, value_range) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    x = np.asarray(x, dtype=np.float64)
    lo, hi = value_range
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)


def psnr(a, b, value_range=(-1.0, 1.0)) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs report ``PSNR_CAP``."""
    a, b = _to_unit(a, value_range), _to_unit(b, value_range)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = len(win)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ win
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ win


def _gray(x: np.ndarray) -> np.ndarray:
    # (C, H, W) -> channel mean; 2-D passes through
    return x.mean(axis=0) if x.ndim == 3 else x


def ssim(a, b, value_range=(-1.0, 1.0), win_size: int = 11, sigma: float = 1.5, k1=0.01, k2=0.03) -> float:
    """Mean SSIM over all fully contained Gaussian windows of the grey image."""
    a, b = _to_unit(a, value_range), _to_unit(b, value_range)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    a, b = _gray(a), _gray(b)
    if min(a.shape) < win_size:
        raise ValueError(f"image {a.shape} smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * 1.0) ** 2, (k2 * 1.0) ** 2
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a**2
    var_b = _filter_valid(b * b, win) - mu_b**2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    psnr_db: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, name: str, sr, hr, value_range=(-1.0, 1.0)) -> None:
        self.names.append(name)
        self.psnr_db.append(psnr(sr, hr, value_range))
        self.ssim.append(ssim(sr, hr, value_range))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_db)) if self.psnr_db else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else float("nan")

    def to_dict(self) -> dict:
        return {
            "per_image": [
                {"name": n, "psnr_db": p, "ssim": s} for n, p, s in zip(self.names, self.psnr_db, self.ssim)
            ],
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
        }
