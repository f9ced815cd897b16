"""Image ingestion, continuous-scale degradation and (LR, HR, s) pairs.

Images are ``(3, H, W)`` float tensors in ``[-1, 1]`` (pixel 0 -> -1,
pixel 255 -> +1).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DataError
from .neural_operator import target_size

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff"}
MIN_LR = 8


@dataclass
class DatasetConfig:
    root: str = "data"
    hr_size: int = 48
    M: float = 8.0
    split: float = 0.8
    seed: int = 0


@dataclass
class Dataset:
    train: list[torch.Tensor] = field(default_factory=list)
    eval: list[torch.Tensor] = field(default_factory=list)
    train_names: list[str] = field(default_factory=list)
    eval_names: list[str] = field(default_factory=list)


@dataclass
class ScalePair:
    lr: torch.Tensor
    hr: torch.Tensor
    s: float


def to_tensor(img: Image.Image) -> torch.Tensor:
    arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def to_uint8(x: torch.Tensor) -> np.ndarray:
    x = x.detach().to(torch.float64).clamp(-1.0, 1.0)
    arr = torch.round((x + 1.0) * 127.5).to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def read_image(path) -> torch.Tensor:
    with Image.open(path) as img:
        return to_tensor(img)


def write_png(x: torch.Tensor, path) -> None:
    Image.fromarray(to_uint8(x), mode="RGB").save(path, format="PNG")


def center_crop(x: torch.Tensor, size: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    top, left = (h - size) // 2, (w - size) // 2
    return x[..., top : top + size, left : left + size]


def list_images(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data directory not found: {root}")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dataset(cfg: DatasetConfig) -> Dataset:
    """Center-crop every readable image under ``cfg.root`` and split by seeded shuffle."""
    images, names = [], []
    for path in list_images(cfg.root):
        try:
            x = read_image(path)
        except Exception as exc:  # PIL raises a zoo of types on bad files
            log.warning("skipping unreadable image %s: %s", path, exc)
            continue
        if min(x.shape[-2:]) < cfg.hr_size:
            log.warning("skipping %s: smaller than %d px", path, cfg.hr_size)
            continue
        images.append(center_crop(x, cfg.hr_size).contiguous())
        names.append(path.name)
    if not images:
        raise DataError(f"no usable images in {cfg.root}")
    order = np.random.default_rng(cfg.seed).permutation(len(images))
    n_train = max(1, int(math.floor(len(images) * cfg.split + 0.5)))
    tr, ev = sorted(order[:n_train]), sorted(order[n_train:])
    return Dataset(
        train=[images[i] for i in tr],
        eval=[images[i] for i in ev],
        train_names=[names[i] for i in tr],
        eval_names=[names[i] for i in ev],
    )


def max_scale(hr_size: int, M: float) -> float:
    """Largest training scale that keeps the LR side at least 8 px."""
    return min(float(M), hr_size / MIN_LR)


def sample_scale(rng: np.random.Generator, M: float, size=None):
    """Uniform draw on (1, M]."""
    if not M > 1:
        raise ValueError(f"M must exceed 1, got {M}")
    u = 1.0 - rng.random(size=size)  # (0, 1]
    return 1.0 + (M - 1.0) * u


def lr_size(hr_size: int, s: float) -> int:
    """Round-half-up of ``hr_size / s``, kept strictly below ``hr_size`` so the scale stays > 1."""
    return min(int(math.floor(hr_size / s + 0.5)), hr_size - 1)


def resize(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    """Antialiased bicubic resize, clamped to [-1, 1]."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    out = F.interpolate(x, size=size, mode="bicubic", align_corners=False, antialias=True)
    out = out.clamp(-1.0, 1.0)
    return out[0] if squeeze else out


def degrade(hr: torch.Tensor, s: float) -> torch.Tensor:
    """Bicubic downsampling of ``hr`` by ``s`` to ``round(H/s) x round(W/s)``."""
    if not s > 1.0:
        raise ValueError(f"scale must exceed 1, got {s}")
    h, w = lr_size(hr.shape[-2], s), lr_size(hr.shape[-1], s)
    if min(h, w) < MIN_LR:
        raise DataError(f"scale {s} shrinks {tuple(hr.shape[-2:])} below {MIN_LR}x{MIN_LR}")
    return resize(hr, (h, w))


def bicubic_upsample(lr: torch.Tensor, s: float) -> torch.Tensor:
    return resize(lr, (target_size(lr.shape[-2], s), target_size(lr.shape[-1], s)))


def make_pair(hr: torch.Tensor, s: float, rng=None) -> ScalePair:
    """Degrade ``hr`` and record the scale re-derived from the rounded LR size.

    ``rng`` is accepted for pipeline symmetry; degradation itself is deterministic.
    """
    lr = degrade(hr, s)
    s_eff = hr.shape[-2] / lr.shape[-2]
    pair = ScalePair(lr=lr, hr=hr, s=s_eff)
    for a in (-2, -1):
        if target_size(lr.shape[a], s_eff) != hr.shape[a]:
            raise DataError(f"pair violates size invariant on axis {a}: {tuple(lr.shape)} x {s_eff}")
    return pair


def build_pairs(hrs, M: float, seed: int, workers: int = 1) -> list[ScalePair]:
    """One random-scale pair per HR image.

    Every index gets its own rng stream spawned from ``seed``, so the result
    does not depend on ``workers``.
    """
    streams = np.random.SeedSequence(seed).spawn(len(hrs))

    def one(i):
        rng = np.random.default_rng(streams[i])
        return make_pair(hrs[i], float(sample_scale(rng, max_scale(hrs[i].shape[-1], M))))

    if workers <= 1:
        return [one(i) for i in range(len(hrs))]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(one, range(len(hrs))))


def synthetic_scene(size: int, rng: np.random.Generator) -> torch.Tensor:
    """Procedural aerial-looking tile: field patches, roads and rooftops."""
    n_seeds = rng.integers(4, 9)
    seeds = rng.uniform(0, size, (n_seeds, 2))
    palette = rng.uniform(-0.8, 0.6, (n_seeds, 3))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = (yy[None] - seeds[:, 0, None, None]) ** 2 + (xx[None] - seeds[:, 1, None, None]) ** 2
    img = palette[np.argmin(dist, axis=0)].transpose(2, 0, 1)
    # crop-row stripes inside each patch
    freq = rng.uniform(0.3, 1.2, n_seeds)
    angle = rng.uniform(0, np.pi, n_seeds)
    label = np.argmin(dist, axis=0)
    phase = np.cos(angle[label]) * xx + np.sin(angle[label]) * yy
    img = img + 0.15 * np.sin(freq[label] * phase)[None]
    for _ in range(rng.integers(1, 4)):
        width = rng.integers(1, 4)
        if rng.random() < 0.5:
            r = rng.integers(0, size - width)
            img[:, r : r + width, :] = rng.uniform(0.2, 0.6)
        else:
            c = rng.integers(0, size - width)
            img[:, :, c : c + width] = rng.uniform(0.2, 0.6)
    for _ in range(rng.integers(2, 6)):
        h, w = rng.integers(3, max(4, size // 6), 2)
        r, c = rng.integers(0, size - h), rng.integers(0, size - w)
        img[:, r : r + h, c : c + w] = rng.uniform(-1.0, 1.0, (3, 1, 1))
    img = img + 0.04 * rng.standard_normal(img.shape)
    return torch.from_numpy(np.clip(img, -1.0, 1.0).astype(np.float32))


def write_synthetic_dataset(root, n: int, size: int, seed: int = 0) -> list[Path]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        p = root / f"scene_{i:03d}.png"
        write_png(synthetic_scene(size, rng), p)
        paths.append(p)
    return paths
