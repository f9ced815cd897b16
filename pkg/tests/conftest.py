import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from neurop_diff.config import merge_overrides, toy_profile  # noqa: E402
from neurop_diff.data import Dataset, synthetic_scene  # noqa: E402

GATE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance gate")
        for line in GATE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def gate():
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""

    def record(name: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        GATE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def small_run():
    """Seconds-scale config used by unit tests of the training loops."""
    base = {
        "data": {"hr_size": 32},
        "operator": {"d_r": 8, "num_layers": 1, "encoder_blocks": 1, "encoder_channels": 8, "head_hidden": 16},
        "denoiser": {"base_channels": 8, "depth": 2, "gamma_embed_dim": 16},
        "train": {
            "operator": {"batch_size": 2, "max_iters": 12, "warm_iters": 2, "log_every": 1},
            "diffusion": {"batch_size": 2, "max_iters": 12, "warm_iters": 2, "log_every": 1, "prior_bank": 0},
        },
        "sample": {"steps": 5, "scale": 2.0},
    }
    return merge_overrides(toy_profile(), base)


def synthetic_dataset(n: int, size: int, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    imgs = [synthetic_scene(size, rng) for _ in range(n)]
    return Dataset(train=imgs, train_names=[f"scene_{i}" for i in range(n)])


@pytest.fixture
def small():
    return small_run(), synthetic_dataset(2, 32)


@pytest.fixture(scope="session")
def overfit():
    """Four 48 px images, toy profile, 2k operator then 5k denoiser iterations per mode.

    Shared by the training tests and the acceptance gate so the heavy run
    happens once per session.
    """
    from neurop_diff.evaluation import bicubic_fn, evaluate, resolver_fn
    from neurop_diff.pipeline import SuperResolver
    from neurop_diff.training import train_diffusion, train_operator

    run = toy_profile()
    ds = synthetic_dataset(4, 48, seed=0)
    t0 = time.perf_counter()
    op_losses = []
    op_ckpt = train_operator(run, ds, losses=op_losses)
    out = {"run": run, "dataset": ds, "operator": op_ckpt, "operator_losses": op_losses, "modes": {}}
    (base,) = evaluate(bicubic_fn, ds.train, ds.train_names, [2.0], run.operator.M)
    out["bicubic_psnr"] = base.report.mean_psnr
    for mode in ("neurop", "encoder", "bicubic"):
        losses = []
        ckpt = train_diffusion(run, ds, op_ckpt, mode, losses=losses)
        resolver = SuperResolver.from_checkpoint(ckpt)
        (res,) = evaluate(resolver_fn(resolver, run.sample.steps, 0), ds.train, ds.train_names, [2.0], run.operator.M)
        out["modes"][mode] = {"ckpt": ckpt, "losses": losses, "psnr": res.report.mean_psnr}
    out["wall"] = time.perf_counter() - t0
    return out
