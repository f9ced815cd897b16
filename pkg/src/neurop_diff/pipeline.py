"""Prior construction for the three conditioning modes and end-to-end super-resolution."""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint
from .config import CONDITION_MODES, RunConfig, config_from_dict
from .data import resize
from .denoiser import UNet
from .diffusion import sample
from .errors import CheckpointError
from .neural_operator import NeuralOperator, target_size
from .schedule import NoiseSchedule, inference_subsequence, schedule_from_dict


def prior_channels(mode: str, run: RunConfig) -> int:
    return run.operator.encoder_channels if mode == "encoder" else 3


def make_prior(mode: str, operator: NeuralOperator | None, lr: torch.Tensor, s: float, allow_ood: bool = False):
    """Conditioning image ``y`` for a batch of LR inputs at scale ``s``.

    ``bicubic``: upsampled LR; ``encoder``: bicubic-upsampled encoder features;
    ``neurop``: the full operator output.
    """
    size = (target_size(lr.shape[-2], s), target_size(lr.shape[-1], s))
    if mode == "bicubic":
        return resize(lr, size)
    if operator is None:
        raise CheckpointError(f"condition mode {mode!r} needs an operator checkpoint")
    if mode == "encoder":
        return F.interpolate(operator.encode(lr), size=size, mode="bicubic", align_corners=False)
    if mode == "neurop":
        return operator(lr, s, allow_ood=allow_ood)
    raise ValueError(f"unknown condition mode {mode!r}; expected one of {CONDITION_MODES}")


def build_operator(run: RunConfig, ckpt: Checkpoint | None = None) -> NeuralOperator:
    op = NeuralOperator(run.operator)
    if ckpt is not None:
        tensors = ckpt.group("operator")
        if not tensors:
            raise CheckpointError("checkpoint holds no operator parameters")
        try:
            op.load_state_dict(tensors)
        except RuntimeError as exc:
            raise CheckpointError(f"operator parameters do not match config: {exc}") from exc
    return op


class SuperResolver:
    """Frozen operator + denoiser + schedule, ready for sampling."""

    def __init__(self, run: RunConfig, mode: str, denoiser: UNet, operator: NeuralOperator | None = None):
        self.run = run
        self.mode = mode
        self.denoiser = denoiser.eval()
        self.operator = operator.eval() if operator is not None else None
        self.schedule: NoiseSchedule = schedule_from_dict(run.schedule)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "SuperResolver":
        if ckpt.kind != "diffusion":
            raise CheckpointError(f"expected a diffusion checkpoint, got {ckpt.kind!r}")
        run = config_from_dict(ckpt.manifest["config"])
        mode = ckpt.manifest["condition"]
        operator = build_operator(run, ckpt) if mode != "bicubic" else None
        run.denoiser.cond_channels = prior_channels(mode, run)
        den = UNet(run.denoiser)
        try:
            den.load_state_dict(ckpt.group("denoiser"))
        except RuntimeError as exc:
            raise CheckpointError(f"denoiser parameters do not match config: {exc}") from exc
        return cls(run, mode, den, operator)

    @property
    def M(self) -> float:
        return self.run.operator.M

    @torch.no_grad()
    def prior(self, lr, s, allow_ood=False):
        return make_prior(self.mode, self.operator, lr, s, allow_ood)

    @torch.no_grad()
    def super_resolve(self, lr, s: float, steps: int = 50, seed: int = 0, allow_ood: bool = False):
        """Sample an SR image for ``lr`` (``(3,h,w)`` or batched).

        Sizes not divisible by the U-Net stride are edge-padded and cropped back.
        """
        squeeze = lr.ndim == 3
        if squeeze:
            lr = lr.unsqueeze(0)
        y = self.prior(lr, s, allow_ood)
        h, w = y.shape[-2:]
        k = 2**self.run.denoiser.depth
        ph, pw = (-h) % k, (-w) % k
        if ph or pw:
            y = F.pad(y, (0, pw, 0, ph), mode="replicate")
        gen = torch.Generator().manual_seed(seed)
        plan = inference_subsequence(self.schedule, steps)
        out = sample(self.denoiser, y, plan, gen)[..., :h, :w]
        return out[0] if squeeze else out
