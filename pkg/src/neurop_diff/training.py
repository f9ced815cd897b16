"""Two-phase training: operator pretraining, then denoiser training with the operator frozen."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import time
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    Checkpoint,
    decode_torch_rng,
    encode_torch_rng,
    module_tensors,
    optimizer_tensors,
    param_hash,
    restore_optimizer,
    save_checkpoint,
)
from .config import CONDITION_MODES, RunConfig, TrainConfig, config_from_dict
from .data import Dataset, degrade, max_scale, sample_scale
from .denoiser import UNet
from .diffusion import training_step_loss
from .errors import CheckpointError, DataError, NumericalError
from .metrics import psnr
from .neural_operator import NeuralOperator
from .pipeline import build_operator, make_prior, prior_channels
from .schedule import schedule_from_dict

log = logging.getLogger(__name__)


def lr_at(cfg: TrainConfig, it: int) -> float:
    """Constant ``lr_init`` during warm-up, then cosine decay to ``lr_min`` at ``max_iters``."""
    if not 0 <= it <= cfg.max_iters:
        raise ValueError(f"iteration {it} outside [0, {cfg.max_iters}]")
    if it < cfg.warm_iters:
        return cfg.lr_init
    frac = (it - cfg.warm_iters) / (cfg.max_iters - cfg.warm_iters)
    return cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


def _new_module(factory, seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return factory()


def _param_names(model: torch.nn.Module) -> dict[int, str]:
    return {i: n for i, (n, _) in enumerate(model.named_parameters())}


class _Logger:
    def __init__(self, path, every: int):
        self.path = Path(path) if path else None
        self.every = max(1, every)
        self.t0 = time.perf_counter()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, it: int, **fields):
        if not self.path or ((it + 1) % self.every and "eval_psnr" not in fields):
            return
        rec = {"iter": it + 1, **fields, "wall": round(time.perf_counter() - self.t0, 3)}
        with self.path.open("a") as fh:
            fh.write(json.dumps(rec) + "\n")


def _check_finite(loss: torch.Tensor, it: int, seed: int, idx) -> None:
    if not torch.isfinite(loss):
        raise NumericalError(
            f"non-finite loss at iteration {it} (seed {seed}, batch indices {list(map(int, idx))})"
        )


def _step(opt, model, loss, lr: float, clip: float) -> None:
    for g in opt.param_groups:
        g["lr"] = lr
    opt.zero_grad(set_to_none=True)
    loss.backward()
    if clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), clip)
    opt.step()


def _adam(model, lr):
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def _training_images(dataset: Dataset) -> torch.Tensor:
    if not dataset.train:
        raise DataError("training set is empty")
    return torch.stack(dataset.train)


def _scale_cap(run: RunConfig, hrs: torch.Tensor) -> float:
    return max_scale(hrs.shape[-1], min(run.data.M, run.operator.M))


def _checkpoint(kind, run, it, model_tensors, opt, names, rng, gen=None, **extra) -> Checkpoint:
    opt_t, steps = optimizer_tensors(opt, names)
    manifest = {
        "kind": kind,
        "config": run.to_dict(),
        "iteration": it,
        "schedule": run.schedule,
        "optim_steps": steps,
        "rng": {"numpy": rng.bit_generator.state, "torch": encode_torch_rng(gen) if gen is not None else None},
        **extra,
    }
    return Checkpoint(manifest=manifest, tensors={**model_tensors, **opt_t})


@torch.no_grad()
def evaluate_operator(model: NeuralOperator, images, s: float) -> float:
    model.eval()
    scores = []
    for hr in images:
        lr = degrade(hr, s)
        pred = model(lr[None], hr.shape[-2] / lr.shape[-2])[0]
        scores.append(psnr(pred.clamp(-1, 1), hr))
    model.train()
    return float(np.mean(scores))


def train_operator(
    run: RunConfig,
    dataset: Dataset,
    out=None,
    resume: Checkpoint | None = None,
    stop_at: int | None = None,
    log_path=None,
    losses: list | None = None,
) -> Checkpoint:
    """Phase 1: minimise L1(operator(lr, s), hr) with per-batch random scales."""
    cfg = run.train.operator
    hrs = _training_images(dataset)
    cap = _scale_cap(run, hrs)
    seed = run.seed
    model = _new_module(lambda: NeuralOperator(run.operator), seed)
    opt = _adam(model, cfg.lr_init)
    names = _param_names(model)
    rng = np.random.default_rng(seed)
    start = 0
    if resume is not None:
        model.load_state_dict(resume.group("operator"))
        restore_optimizer(opt, names, resume)
        rng.bit_generator.state = resume.manifest["rng"]["numpy"]
        start = int(resume.manifest["iteration"])
    stop = cfg.max_iters if stop_at is None else min(stop_at, cfg.max_iters)
    logger = _Logger(log_path, cfg.log_every)
    eval_images = dataset.eval or dataset.train
    eval_scale = min(run.sample.scale, cap)
    model.train()
    for it in range(start, stop):
        lr_now = lr_at(cfg, it)
        idx = rng.choice(len(hrs), size=cfg.batch_size, replace=cfg.batch_size > len(hrs))
        s = float(sample_scale(rng, cap))
        hr = hrs[idx]
        lr_img = degrade(hr, s)
        pred = model(lr_img, hr.shape[-2] / lr_img.shape[-2])
        loss = (pred - hr).abs().mean()
        _check_finite(loss, it, seed, idx)
        _step(opt, model, loss, lr_now, cfg.grad_clip)
        val = loss.item()
        if losses is not None:
            losses.append(val)
        fields = {"loss": val, "lr": lr_now}
        if cfg.eval_every and (it + 1) % cfg.eval_every == 0:
            fields["eval_psnr"] = evaluate_operator(model, eval_images, eval_scale)
            log.info("operator iter %d eval psnr %.2f dB", it + 1, fields["eval_psnr"])
        logger(it, **fields)
        if out and cfg.ckpt_every and (it + 1) % cfg.ckpt_every == 0 and it + 1 < stop:
            _checkpoint("operator", run, it + 1, module_tensors("operator", model), opt, names, rng).save(out)
    ckpt = _checkpoint("operator", run, stop, module_tensors("operator", model), opt, names, rng)
    if out:
        save_checkpoint(ckpt, out)
    return ckpt


def _prior_bank(mode, operator, hrs, count: int, cap: float, seed: int) -> list[list[torch.Tensor]]:
    rng = np.random.default_rng([seed, 1])
    bank = []
    with torch.no_grad():
        for hr in hrs:
            row = []
            for _ in range(count):
                lr = degrade(hr, float(sample_scale(rng, cap)))
                row.append(make_prior(mode, operator, lr[None], hr.shape[-2] / lr.shape[-2])[0])
            bank.append(row)
    return bank


def train_diffusion(
    run: RunConfig,
    dataset: Dataset,
    operator_ckpt: Checkpoint | None = None,
    condition: str = "neurop",
    out=None,
    resume: Checkpoint | None = None,
    stop_at: int | None = None,
    log_path=None,
    losses: list | None = None,
) -> Checkpoint:
    """Phase 2: train the denoiser on L1 noise prediction with the operator frozen."""
    if condition not in CONDITION_MODES:
        raise ValueError(f"unknown condition mode {condition!r}")
    if condition != "bicubic" and operator_ckpt is None:
        raise CheckpointError(f"condition mode {condition!r} requires an operator checkpoint")
    run = copy.deepcopy(run)
    operator = None
    if operator_ckpt is not None and condition != "bicubic":
        if operator_ckpt.kind not in ("operator", "diffusion"):
            raise CheckpointError(f"unexpected checkpoint kind {operator_ckpt.kind!r}")
        run.operator = config_from_dict(operator_ckpt.manifest["config"]).operator
        operator = build_operator(run, operator_ckpt).eval()
        operator.requires_grad_(False)
    run.denoiser = dataclasses.replace(run.denoiser, cond_channels=prior_channels(condition, run))
    cfg = run.train.diffusion
    schedule = schedule_from_dict(run.schedule)
    hrs = _training_images(dataset)
    cap = _scale_cap(run, hrs)
    seed = run.seed
    op_hash = param_hash(operator) if operator is not None else None

    model = _new_module(lambda: UNet(run.denoiser), seed + 1)
    opt = _adam(model, cfg.lr_init)
    names = _param_names(model)
    rng = np.random.default_rng(seed)
    gen = torch.Generator().manual_seed(seed)
    start = 0
    if resume is not None:
        model.load_state_dict(resume.group("denoiser"))
        restore_optimizer(opt, names, resume)
        rng.bit_generator.state = resume.manifest["rng"]["numpy"]
        gen = decode_torch_rng(resume.manifest["rng"]["torch"])
        start = int(resume.manifest["iteration"])
    stop = cfg.max_iters if stop_at is None else min(stop_at, cfg.max_iters)
    bank = _prior_bank(condition, operator, hrs, cfg.prior_bank, cap, seed) if cfg.prior_bank > 0 else None
    logger = _Logger(log_path, cfg.log_every)

    def denoise(y, zt, g):
        return model(y, zt, g, generator=gen)

    def tensors():
        t = module_tensors("denoiser", model)
        if operator is not None:
            t.update(module_tensors("operator", operator))
        return t

    def make_ckpt(it):
        return _checkpoint(
            "diffusion", run, it, tensors(), opt, names, rng, gen, condition=condition, operator_hash=op_hash
        )

    model.train()
    for it in range(start, stop):
        lr_now = lr_at(cfg, it)
        idx = rng.choice(len(hrs), size=cfg.batch_size, replace=cfg.batch_size > len(hrs))
        if bank is not None:
            js = rng.integers(0, cfg.prior_bank, size=len(idx))
            y = torch.stack([bank[i][j] for i, j in zip(idx, js)])
        else:
            ys = []
            with torch.no_grad():
                for i in idx:
                    lr = degrade(hrs[i], float(sample_scale(rng, cap)))
                    ys.append(make_prior(condition, operator, lr[None], hrs.shape[-2] / lr.shape[-2])[0])
            y = torch.stack(ys)
        loss = training_step_loss(denoise, y, hrs[idx], schedule, rng, gen)
        _check_finite(loss, it, seed, idx)
        _step(opt, model, loss, lr_now, cfg.grad_clip)
        val = loss.item()
        if losses is not None:
            losses.append(val)
        logger(it, loss=val, lr=lr_now)
        if out and cfg.ckpt_every and (it + 1) % cfg.ckpt_every == 0 and it + 1 < stop:
            make_ckpt(it + 1).save(out)
    if operator is not None and param_hash(operator) != op_hash:
        raise RuntimeError("operator parameters changed during diffusion training")
    ckpt = make_ckpt(stop)
    if out:
        save_checkpoint(ckpt, out)
    return ckpt
