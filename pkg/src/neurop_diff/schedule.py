"""Diffusion noise schedules.

A schedule stores the per-step retention coefficients ``alpha[t]`` and their
running products ``gamma[t]`` for ``t = 1..T``.  Arrays are indexed from zero
in memory (``alpha[0]`` is alpha_1); the accessors below take the 1-based
timestep and treat ``gamma(0)`` as exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "InferencePlan",
    "make_schedule",
    "sample_gamma",
    "inference_subsequence",
    "schedule_from_dict",
]


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray
    gamma: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        gamma = np.asarray(self.gamma, dtype=np.float64)
        alpha.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)

    @property
    def T(self) -> int:
        return len(self.alpha)

    def alpha_at(self, t: int) -> float:
        self._check_t(t)
        return float(self.alpha[t - 1])

    def gamma_at(self, t: int) -> float:
        """gamma_t with the convention gamma_0 = 1."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.gamma[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "T": self.T, **self.params}


@dataclass(frozen=True)
class InferencePlan:
    steps: tuple[int, ...]
    schedule: NoiseSchedule

    def __len__(self) -> int:
        return len(self.steps)

    def segments(self):
        """Yield ``(t, t_next)`` pairs; the final ``t_next`` is 0."""
        nxt = self.steps[1:] + (0,)
        return zip(self.steps, nxt)


def _from_alpha(alpha: np.ndarray, kind: str, params: dict) -> NoiseSchedule:
    alpha = np.asarray(alpha, dtype=np.float64)
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0.0) or np.any(alpha >= 1.0):
        raise ValueError("schedule parameters produce alpha_t outside (0, 1)")
    return NoiseSchedule(alpha=alpha, gamma=np.cumprod(alpha), kind=kind, params=params)


def make_schedule(kind: str = "linear", T: int = 2000, **params) -> NoiseSchedule:
    """Build a noise schedule.

    ``kind="linear"`` uses beta_t linearly spaced in ``[beta_start, beta_end]``
    with ``alpha_t = 1 - beta_t``.  ``kind="constant"`` uses a single ``alpha``
    for every step.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    T = int(T)
    if kind == "linear":
        beta_start = float(params.pop("beta_start", 1e-6))
        beta_end = float(params.pop("beta_end", 1e-2))
        if params:
            raise ValueError(f"unknown linear schedule parameters: {sorted(params)}")
        betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        return _from_alpha(1.0 - betas, "linear", {"beta_start": beta_start, "beta_end": beta_end})
    if kind == "constant":
        alpha = float(params.pop("alpha", 0.99))
        if params:
            raise ValueError(f"unknown constant schedule parameters: {sorted(params)}")
        return _from_alpha(np.full(T, alpha), "constant", {"alpha": alpha})
    raise ValueError(f"unknown schedule kind {kind!r}")


def schedule_from_dict(d: dict) -> NoiseSchedule:
    d = dict(d)
    return make_schedule(d.pop("kind"), d.pop("T"), **d)


def sample_gamma(schedule: NoiseSchedule, rng: np.random.Generator, size=None):
    """Draw a continuous noise level from the uniform mixture over step intervals.

    ``t`` is uniform on ``{1, ..., T}`` and ``gamma`` is uniform between
    ``gamma_t`` and ``gamma_{t-1}``.  Returns ``(gamma, t)``; with ``size``
    both are arrays.
    """
    t = rng.integers(1, schedule.T + 1, size=size)
    hi = np.where(t == 1, 1.0, schedule.gamma[np.maximum(t - 2, 0)])
    lo = schedule.gamma[t - 1]
    u = rng.random(size=size)
    g = lo + u * (hi - lo)
    if size is None:
        return float(g), int(t)
    return g, t


def inference_subsequence(schedule: NoiseSchedule, K: int) -> InferencePlan:
    """K uniformly spaced timesteps from T down to 1, both endpoints included."""
    T = schedule.T
    if T == 1:
        if K != 1:
            raise ValueError(f"K must be 1 when T == 1, got {K}")
        return InferencePlan((1,), schedule)
    if not 2 <= K <= T:
        raise ValueError(f"K must lie in [2, {T}], got {K}")
    # integer arithmetic keeps the spacing exact: gaps are floor/ceil of (T-1)/(K-1)
    steps = tuple(T - (i * (T - 1)) // (K - 1) for i in range(K))
    return InferencePlan(steps, schedule)
