"""Checkpoint archive: a zip holding ``manifest.json`` plus raw little-endian float32 tensors.

Layout::

    manifest.json          configs, iteration, schedule, tensor index, rng state
    tensors/<name>.f32     one file per tensor, C order

Entries carry a fixed timestamp so identical contents give identical bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

FORMAT = "neurop-diff-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    manifest: dict = field(default_factory=dict)
    tensors: dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.manifest.get("kind", "")

    def group(self, prefix: str) -> dict[str, torch.Tensor]:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def save(self, path) -> None:
        save_checkpoint(self, path)


def _entry(name: str) -> zipfile.ZipInfo:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    return info


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write atomically: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {}
    blobs = {}
    for name in sorted(ckpt.tensors):
        arr = ckpt.tensors[name].detach().cpu().to(torch.float32).contiguous().numpy()
        fname = f"tensors/{name}.f32"
        index[name] = {"shape": list(arr.shape), "file": fname}
        blobs[fname] = arr.astype("<f4").tobytes()
    manifest = dict(ckpt.manifest, format=FORMAT, version=VERSION, tensors=index)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh, zipfile.ZipFile(fh, "w") as zf:
            zf.writestr(_entry("manifest.json"), json.dumps(manifest, indent=1, sort_keys=True))
            for fname, data in blobs.items():
                zf.writestr(_entry(fname), data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            if manifest.get("format") != FORMAT:
                raise CheckpointError(f"{path} is not a {FORMAT} archive")
            tensors = {}
            for name, meta in manifest["tensors"].items():
                arr = np.frombuffer(zf.read(meta["file"]), dtype="<f4").reshape(meta["shape"])
                tensors[name] = torch.from_numpy(arr.astype(np.float32))
    except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return Checkpoint(manifest=manifest, tensors=tensors)


def module_tensors(prefix: str, module: torch.nn.Module) -> dict[str, torch.Tensor]:
    return {f"{prefix}.{k}": v.detach().clone() for k, v in module.state_dict().items()}


def param_hash(module_or_tensors) -> str:
    """SHA-256 over sorted parameter names and their float32 bytes."""
    if isinstance(module_or_tensors, torch.nn.Module):
        tensors = module_or_tensors.state_dict()
    else:
        tensors = module_or_tensors
    h = hashlib.sha256()
    for name in sorted(tensors):
        h.update(name.encode())
        h.update(tensors[name].detach().cpu().to(torch.float32).contiguous().numpy().astype("<f4").tobytes())
    return h.hexdigest()


def encode_torch_rng(gen: torch.Generator) -> str:
    return base64.b64encode(gen.get_state().numpy().tobytes()).decode("ascii")


def decode_torch_rng(text: str) -> torch.Generator:
    gen = torch.Generator()
    state = np.frombuffer(base64.b64decode(text), dtype=np.uint8).copy()
    gen.set_state(torch.from_numpy(state))
    return gen


def optimizer_tensors(opt: torch.optim.Optimizer, names: dict[int, str]) -> tuple[dict, dict]:
    """Split Adam state into float tensors (archived) and step counters (manifest)."""
    sd = opt.state_dict()
    tensors, steps = {}, {}
    for idx, st in sd["state"].items():
        name = names[idx]
        steps[name] = int(st["step"])
        tensors[f"optim.{name}.exp_avg"] = st["exp_avg"]
        tensors[f"optim.{name}.exp_avg_sq"] = st["exp_avg_sq"]
    return tensors, steps


def restore_optimizer(opt: torch.optim.Optimizer, names: dict[int, str], ckpt: Checkpoint) -> None:
    sd = opt.state_dict()
    steps = ckpt.manifest.get("optim_steps", {})
    state = {}
    for idx, name in names.items():
        if name not in steps:
            continue
        state[idx] = {
            "step": torch.tensor(float(steps[name])),
            "exp_avg": ckpt.tensors[f"optim.{name}.exp_avg"].clone(),
            "exp_avg_sq": ckpt.tensors[f"optim.{name}.exp_avg_sq"].clone(),
        }
    sd["state"] = state
    opt.load_state_dict(sd)

