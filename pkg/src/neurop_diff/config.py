"""Run configuration: JSON schema, strict validation and the toy/paper profiles."""

from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import DatasetConfig
from .denoiser import DenoiserConfig
from .errors import ConfigError
from .neural_operator import OperatorConfig
from .schedule import schedule_from_dict

PROFILES = ("toy", "paper")
CONDITION_MODES = ("bicubic", "encoder", "neurop")


@dataclass
class TrainConfig:
    phase: str = "operator"
    batch_size: int = 4
    max_iters: int = 2000
    lr_init: float = 1e-4
    lr_min: float = 2e-6
    warm_iters: int = 200
    grad_clip: float = 1.0
    log_every: int = 50
    ckpt_every: int = 0
    eval_every: int = 0
    # >0: pre-draw this many random-scale priors per image and reuse them
    prior_bank: int = 0

    def __post_init__(self):
        if self.phase not in ("operator", "diffusion"):
            raise ConfigError(f"train phase must be 'operator' or 'diffusion', got {self.phase!r}")
        if not self.lr_min < self.lr_init:
            raise ConfigError("lr_min must be below lr_init")
        if not 0 <= self.warm_iters < self.max_iters:
            raise ConfigError("warm_iters must lie in [0, max_iters)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainSection:
    operator: TrainConfig = field(default_factory=lambda: TrainConfig(phase="operator"))
    diffusion: TrainConfig = field(default_factory=lambda: TrainConfig(phase="diffusion"))


@dataclass
class SampleConfig:
    steps: int = 50
    scale: float = 4.0
    eval_scales: list = field(default_factory=lambda: [2.0, 4.0, 8.0])


@dataclass
class RunConfig:
    profile: str = "toy"
    seed: int = 0
    data: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: dict = field(default_factory=lambda: {"kind": "linear", "T": 2000, "beta_start": 1e-6, "beta_end": 1e-2})
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    train: TrainSection = field(default_factory=TrainSection)
    sample: SampleConfig = field(default_factory=SampleConfig)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["denoiser"]["channel_mult"] = list(self.denoiser.channel_mult)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def validate(self) -> "RunConfig":
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        try:
            schedule_from_dict(self.schedule)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from exc
        if self.data.hr_size % 2**self.denoiser.depth:
            raise ConfigError(f"data.hr_size={self.data.hr_size} not divisible by 2**denoiser.depth")
        if not 2 <= self.sample.steps <= self.schedule["T"]:
            raise ConfigError("sample.steps must lie in [2, T]")
        return self


def toy_profile() -> RunConfig:
    """Desk-scale defaults sized for a single CPU core."""
    return RunConfig(
        profile="toy",
        data=DatasetConfig(root="data", hr_size=48, M=8.0, split=0.8, seed=0),
        operator=OperatorConfig(d_r=32, num_layers=2, encoder_blocks=4, encoder_channels=32, M=8.0, head_hidden=256),
        denoiser=DenoiserConfig(base_channels=16, depth=3, dropout=0.2, gamma_embed_dim=64),
        train=TrainSection(
            operator=TrainConfig(phase="operator", batch_size=4, max_iters=2000, lr_init=1e-3, lr_min=2e-5, warm_iters=200),
            diffusion=TrainConfig(phase="diffusion", batch_size=4, max_iters=5000, lr_init=1e-3, lr_min=2e-5, warm_iters=500, prior_bank=32),
        ),
        sample=SampleConfig(steps=50, scale=2.0, eval_scales=[2.0, 4.0]),
    )


def paper_profile() -> RunConfig:
    """Full-scale values: 256 px crops, T=2000, 64/10 batch sizes, ~1M diffusion iterations."""
    return RunConfig(
        profile="paper",
        data=DatasetConfig(root="data", hr_size=256, M=8.0, split=0.8, seed=0),
        operator=OperatorConfig(d_r=256, num_layers=2, encoder_blocks=16, encoder_channels=64, M=8.0, head_hidden=256),
        denoiser=DenoiserConfig(base_channels=64, depth=4, channel_mult=(1, 2, 4, 8, 8), dropout=0.2, gamma_embed_dim=128),
        train=TrainSection(
            # 500 epochs at batch 64; the iteration count depends on dataset size
            operator=TrainConfig(phase="operator", batch_size=64, max_iters=100_000, lr_init=1e-4, lr_min=2e-6, warm_iters=10_000),
            diffusion=TrainConfig(phase="diffusion", batch_size=10, max_iters=1_000_000, lr_init=1e-4, lr_min=2e-6, warm_iters=100_000),
        ),
        sample=SampleConfig(steps=50, scale=4.0, eval_scales=[2.0, 3.1, 4.0, 5.8, 7.0, 8.0, 9.0, 10.0]),
    )


def profile_config(name: str) -> RunConfig:
    if name == "toy":
        return toy_profile()
    if name == "paper":
        return paper_profile()
    raise ConfigError(f"unknown profile {name!r}")


def _check_type(value, default, path):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)) or default is None:
        ok = isinstance(value, list) or value is None
        value = list(value) if isinstance(value, list) else value
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def _merge(obj, overrides: dict, path: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path}: expected an object")
    if isinstance(obj, dict):
        out = copy.deepcopy(obj)
        out.update(overrides)  # schedule keys are checked by make_schedule
        return out
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(overrides) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    kwargs = {}
    for f in dataclasses.fields(obj):
        cur = getattr(obj, f.name)
        sub = f"{path}.{f.name}" if path else f.name
        if f.name not in overrides:
            kwargs[f.name] = cur
        elif dataclasses.is_dataclass(cur) or isinstance(cur, dict):
            kwargs[f.name] = _merge(cur, overrides[f.name], sub)
        else:
            kwargs[f.name] = _check_type(overrides[f.name], cur, sub)
    if isinstance(obj, DenoiserConfig) and "depth" in overrides and "channel_mult" not in overrides:
        kwargs["channel_mult"] = None  # re-derive the default for the new depth
    try:
        return type(obj)(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(d: dict) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    profile = d.get("profile", "toy")
    if profile not in PROFILES:
        raise ConfigError(f"profile must be one of {PROFILES}, got {profile!r}")
    return _merge(profile_config(profile), d, "").validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return config_from_dict(d)


def merge_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    return _merge(cfg, overrides, "").validate()
