"""Forward noising, closed-form posterior, training loss and the reverse sampler.

Image arguments may be torch tensors or numpy arrays (scalars also work for
the pure-arithmetic helpers).  Noise-level arguments are either Python floats
or a 1-D tensor holding one value per batch item.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from .schedule import InferencePlan, NoiseSchedule, sample_gamma

__all__ = [
    "PosteriorParams",
    "forward_step",
    "forward_marginal",
    "posterior_params",
    "training_step_loss",
    "reverse_step",
    "sample",
]

Denoiser = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class PosteriorParams:
    mu: object
    sigma2: float


def _check_shapes(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {tuple(np.shape(a))} vs {tuple(np.shape(b))}")


def _per_sample(coef, like):
    """Broadcast a per-batch coefficient vector against an image batch."""
    if isinstance(coef, torch.Tensor) and coef.ndim == 1 and isinstance(like, torch.Tensor):
        return coef.to(like.dtype).view(-1, *([1] * (like.ndim - 1)))
    return coef


def forward_step(z_prev, alpha_t: float, eps):
    """One forward transition: sqrt(alpha_t) * z_prev + sqrt(1 - alpha_t) * eps."""
    if not 0.0 < alpha_t < 1.0:
        raise ValueError(f"alpha_t must lie in (0, 1), got {alpha_t}")
    _check_shapes(z_prev, eps)
    return math.sqrt(alpha_t) * z_prev + math.sqrt(1.0 - alpha_t) * eps


def forward_marginal(z0, gamma, eps):
    """Sample z_t from q(z_t | z_0) given the cumulative retention ``gamma``."""
    _check_shapes(z0, eps)
    if isinstance(gamma, torch.Tensor):
        if torch.any(gamma <= 0) or torch.any(gamma > 1):
            raise ValueError("gamma must lie in (0, 1]")
        g = _per_sample(gamma, z0)
        return torch.sqrt(g) * z0 + torch.sqrt(1.0 - g) * eps
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return z0 + 0.0 * eps
    return math.sqrt(gamma) * z0 + math.sqrt(1.0 - gamma) * eps


def posterior_params(z0, zt, schedule: NoiseSchedule, t: int) -> PosteriorParams:
    """Mean and variance of q(z_{t-1} | z_0, z_t)."""
    _check_shapes(z0, zt)
    a = schedule.alpha_at(t)
    g = schedule.gamma_at(t)
    g_prev = schedule.gamma_at(t - 1)
    if g >= 1.0:
        raise ZeroDivisionError("gamma_t == 1 makes the posterior undefined")
    c0 = math.sqrt(g_prev) * (1.0 - a) / (1.0 - g)
    ct = math.sqrt(a) * (1.0 - g_prev) / (1.0 - g)
    sigma2 = (1.0 - g_prev) * (1.0 - a) / (1.0 - g)
    return PosteriorParams(mu=c0 * z0 + ct * zt, sigma2=sigma2)


def training_step_loss(
    denoiser: Denoiser,
    y: torch.Tensor,
    z0: torch.Tensor,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """L1 noise-prediction loss for one batch.

    ``rng`` draws one (gamma, t) pair per batch item; ``generator`` drives the
    Gaussian noise.
    """
    if y.shape[-2:] != z0.shape[-2:]:
        raise ValueError(f"prior {tuple(y.shape)} and target {tuple(z0.shape)} differ spatially")
    gamma, _ = sample_gamma(schedule, rng, size=z0.shape[0])
    gamma = torch.as_tensor(gamma, dtype=z0.dtype)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    zt = forward_marginal(z0, gamma, eps)
    return (denoiser(y, zt, gamma) - eps).abs().mean()


def reverse_step(eps_hat, zt, schedule: NoiseSchedule, t: int, eps=None, t_next: int | None = None):
    """One reverse update from step ``t`` to ``t_next`` (default ``t - 1``).

    Skipped segments use the effective retention gamma_t / gamma_{t_next}.
    ``eps`` is ignored when landing on step 0.
    """
    if t_next is None:
        t_next = t - 1
    if not 0 <= t_next < t:
        raise ValueError(f"t_next={t_next} must lie in [0, {t})")
    _check_shapes(eps_hat, zt)
    g = schedule.gamma_at(t)
    g_next = schedule.gamma_at(t_next)
    a = g / g_next
    out = (zt - ((1.0 - a) / math.sqrt(1.0 - g)) * eps_hat) / math.sqrt(a)
    if t_next > 0 and eps is not None:
        out = out + math.sqrt(1.0 - a) * eps
    return out


def _clip_prediction(eps_hat, zt, gamma: float):
    sg, sn = math.sqrt(gamma), math.sqrt(1.0 - gamma)
    x0 = ((zt - sn * eps_hat) / sg).clamp(-1.0, 1.0)
    return (zt - sg * x0) / sn


@torch.no_grad()
def sample(
    denoiser: Denoiser,
    y: torch.Tensor,
    plan: InferencePlan,
    generator: torch.Generator | None = None,
    shape=None,
    deterministic: bool = False,
    clamp: bool = True,
    clip_x0: bool = True,
) -> torch.Tensor:
    """Run the conditioned reverse chain from pure noise along ``plan``.

    ``shape`` defaults to ``(B, 3, H, W)`` taken from the prior ``y``.
    With ``clip_x0`` the clean image implied by each noise prediction is
    clipped to [-1, 1] and the prediction re-derived from it before the
    update.  This keeps early high-noise errors from compounding; it is a
    no-op whenever the implied image is already in range.
    """
    schedule = plan.schedule
    if shape is None:
        shape = (y.shape[0], 3, *y.shape[-2:])
    z = torch.randn(shape, generator=generator, dtype=y.dtype)
    for t, t_next in plan.segments():
        g = torch.full((shape[0],), schedule.gamma_at(t), dtype=y.dtype)
        eps_hat = denoiser(y, z, g)
        if clip_x0:
            eps_hat = _clip_prediction(eps_hat, z, schedule.gamma_at(t))
        noise = None
        if t_next > 0 and not deterministic:
            noise = torch.randn(shape, generator=generator, dtype=y.dtype)
        z = reverse_step(eps_hat, z, schedule, t, noise, t_next=t_next)
    if clamp:
        z = z.clamp(-1.0, 1.0)
    return z
