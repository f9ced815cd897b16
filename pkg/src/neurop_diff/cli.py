"""Command-line entry point.

Exit codes: 0 ok, 2 config, 3 data, 4 checkpoint, 5 numeric failure.
Failures print one JSON object on stderr: ``{"error", "message", "exit_code"}``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import CONDITION_MODES, RunConfig, config_from_dict, load_config, profile_config
from .data import center_crop, list_images, load_dataset, read_image, write_png, write_synthetic_dataset
from .errors import CheckpointError, ConfigError, DataError, NeurOpDiffError
from .evaluation import evaluate, resolver_fn, run_ablation, write_results
from .pipeline import SuperResolver
from .training import train_diffusion, train_operator

log = logging.getLogger("neurop_diff")

CACHE_ENV = "NEUROP_DIFF_CACHE"


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV, "runs"))


def _resolve_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
        if args.profile and args.profile != cfg.profile:
            d = json.loads(Path(args.config).read_text())
            d["profile"] = args.profile
            cfg = config_from_dict(d)
    else:
        cfg = profile_config(args.profile or "toy")
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _load_ckpt(path, what="checkpoint"):
    if not path:
        raise CheckpointError(f"{what} path is required")
    if not Path(path).is_file():
        raise CheckpointError(f"{what} not found: {path}")
    return load_checkpoint(path)


def cmd_init_config(args) -> int:
    cfg = profile_config(args.profile or "toy")
    text = cfg.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return 0


def cmd_make_toy_data(args) -> int:
    paths = write_synthetic_dataset(args.out, args.count, args.size, args.seed or 0)
    print(json.dumps({"written": len(paths), "dir": str(args.out)}))
    return 0


def cmd_train_operator(args) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(cfg.data)
    out = Path(args.out) if args.out else cache_dir() / "operator.ckpt"
    log_path = out.with_suffix(".jsonl")
    train_operator(cfg, dataset, out=out, log_path=log_path)
    print(json.dumps({"checkpoint": str(out), "log": str(log_path)}))
    return 0


def cmd_train_diffusion(args) -> int:
    cfg = _resolve_config(args)
    mode = args.condition
    if mode != "bicubic" and not args.operator:
        raise CheckpointError(f"--condition {mode} requires --operator <checkpoint>")
    op_ckpt = _load_ckpt(args.operator, "operator checkpoint") if args.operator else None
    dataset = load_dataset(cfg.data)
    out = Path(args.out) if args.out else cache_dir() / f"diffusion_{mode}.ckpt"
    log_path = out.with_suffix(".jsonl")
    train_diffusion(cfg, dataset, op_ckpt, mode, out=out, log_path=log_path)
    print(json.dumps({"checkpoint": str(out), "condition": mode, "log": str(log_path)}))
    return 0


def cmd_sample(args) -> int:
    resolver = SuperResolver.from_checkpoint(_load_ckpt(args.checkpoint))
    s = args.scale if args.scale is not None else resolver.run.sample.scale
    steps = args.steps if args.steps is not None else resolver.run.sample.steps
    seed = args.seed if args.seed is not None else 0
    if not 1.0 < s <= resolver.M:
        raise ConfigError(f"--scale {s} outside (1, {resolver.M}]")
    if steps < 2:
        raise ConfigError("--steps must be >= 2")
    src = Path(args.input)
    if src.is_dir():
        inputs = list_images(src)
    elif src.is_file():
        inputs = [src]
    else:
        raise DataError(f"input not found: {src}")
    out_dir = Path(args.out) if args.out else cache_dir() / "samples"
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in inputs:
        try:
            lr = read_image(path)
        except Exception as exc:
            raise DataError(f"cannot read input image {path}: {exc}") from exc
        t0 = time.perf_counter()
        sr = resolver.super_resolve(lr, s, steps=steps, seed=seed)
        runtime = time.perf_counter() - t0
        target = out_dir / f"{path.stem}.png"
        write_png(sr, target)
        meta = {
            "input": str(path),
            "output": str(target),
            "scale": s,
            "steps": steps,
            "seed": seed,
            "size": list(sr.shape[-2:]),
            "runtime_s": runtime,
            "condition": resolver.mode,
        }
        (out_dir / f"{path.stem}.json").write_text(json.dumps(meta, indent=2))
        written.append(str(target))
    print(json.dumps({"written": written}))
    return 0


def _parse_scales(text: str) -> list[float]:
    try:
        scales = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --scales {text!r}") from exc
    if not scales or any(v <= 1.0 for v in scales):
        raise ConfigError("--scales must list values above 1")
    return scales


def cmd_eval(args) -> int:
    resolver = SuperResolver.from_checkpoint(_load_ckpt(args.checkpoint))
    run = resolver.run
    hr_size = args.hr_size or run.data.hr_size
    scales = _parse_scales(args.scales) if args.scales else list(run.sample.eval_scales)
    steps = args.steps if args.steps is not None else run.sample.steps
    seed = args.seed if args.seed is not None else 0
    images, names = [], []
    for path in list_images(args.data):
        x = read_image(path)
        if min(x.shape[-2:]) < hr_size:
            log.warning("skipping %s: smaller than %d px", path, hr_size)
            continue
        images.append(center_crop(x, hr_size).contiguous())
        names.append(path.name)
    results = evaluate(resolver_fn(resolver, steps, seed), images, names, scales, resolver.M)
    out_dir = Path(args.out) if args.out else cache_dir() / "eval"
    summary = write_results(results, out_dir)
    print(json.dumps(summary))
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    op_ckpt = _load_ckpt(args.operator, "operator checkpoint")
    dataset = load_dataset(cfg.data)
    scale = args.scale if args.scale is not None else cfg.sample.scale
    steps = args.steps if args.steps is not None else cfg.sample.steps
    out_dir = Path(args.out) if args.out else cache_dir() / "ablation"
    result = run_ablation(cfg, dataset, op_ckpt, scale, steps, seed=cfg.seed, out_dir=out_dir)
    print(json.dumps(result["table"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurop-diff", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run config")
            sp.add_argument("--profile", choices=["toy", "paper"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")

    sp = sub.add_parser("init-config", help="print a profile's full config")
    sp.add_argument("--profile", choices=["toy", "paper"])
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_init_config)

    sp = sub.add_parser("make-toy-data", help="write a folder of synthetic aerial tiles")
    common(sp, config=False)
    sp.add_argument("--count", type=int, default=8)
    sp.add_argument("--size", type=int, default=64)
    sp.set_defaults(func=cmd_make_toy_data)

    sp = sub.add_parser("train-operator", help="phase 1: pretrain the neural operator")
    common(sp)
    sp.set_defaults(func=cmd_train_operator)

    sp = sub.add_parser("train-diffusion", help="phase 2: train the denoiser with a frozen prior")
    common(sp)
    sp.add_argument("--operator", help="operator checkpoint (needed for encoder/neurop)")
    sp.add_argument("--condition", choices=CONDITION_MODES, default="neurop")
    sp.set_defaults(func=cmd_train_diffusion)

    sp = sub.add_parser("sample", help="super-resolve an image or a directory of images")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--scale", type=float)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="PSNR/SSIM sweep over scales")
    common(sp, config=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--scales")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--hr-size", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="compare bicubic / encoder / neurop conditioning")
    common(sp)
    sp.add_argument("--operator", required=True)
    sp.add_argument("--scale", type=float)
    sp.add_argument("--steps", type=int)
    sp.set_defaults(func=cmd_ablate)
    return p


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NeurOpDiffError as exc:
        return _fail(exc, exc.exit_code)


if __name__ == "__main__":
    sys.exit(main())
