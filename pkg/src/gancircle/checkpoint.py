"""Single-file checkpoint container.

Layout::

    b"GCIR" | u32 format version | u64 header length | JSON header | tensor bytes

The header lists every tensor (name, dtype, shape, offset, nbytes, crc32)
plus the training config, model configs and counters. Tensor names follow
``<net>.<layer id>.<param>`` (e.g. ``G.feat.03.conv.weight``) and
``opt.<optimizer>.<param name>.<state key>``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .models import DiscriminatorConfig, Discriminator, Generator, GeneratorConfig
from .training import TrainConfig, TrainState, assemble_state

MAGIC = b"GCIR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def _model_cfg_dict(cfg) -> dict:
    d = asdict(cfg)
    d["kind"] = "generator" if isinstance(cfg, GeneratorConfig) else "discriminator"
    return d


def _model_cfg(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    return GeneratorConfig(**d) if kind == "generator" else DiscriminatorConfig(**d)


def state_tensors(state: TrainState) -> dict:
    out = {}
    for name, net in state.networks().items():
        for k, t in net.state_dict().items():
            out[f"{name}.{k}"] = t
    params = state.optimizer_params()
    for oname, opt in state.optimizers().items():
        for pname, p in params[oname]:
            for key, val in opt.state.get(p, {}).items():
                out[f"opt.{oname}.{pname}.{key}"] = torch.as_tensor(val)
    out["rng.torch"] = state.rng_state
    return out


def write_container(path, tensors: dict, meta: dict, version: int = FORMAT_VERSION) -> None:
    """Atomically write ``tensors`` and ``meta`` (write to a temp file, then rename)."""
    path = Path(path)
    index, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().contiguous().numpy()
        data = arr.tobytes()
        index.append({
            "name": name,
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(data),
            "crc32": zlib.crc32(data),
        })
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"meta": meta, "tensors": index}, sort_keys=True).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(MAGIC, version, len(header)))
            fh.write(header)
            for b in blobs:
                fh.write(b)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_container(path) -> tuple:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    body = raw[start + hlen:]
    tensors = {}
    for rec in header["tensors"]:
        data = body[rec["offset"]:rec["offset"] + rec["nbytes"]]
        if len(data) != rec["nbytes"] or zlib.crc32(data) != rec["crc32"]:
            raise CheckpointError(f"{path}: checksum mismatch for tensor {rec['name']!r}")
        arr = np.frombuffer(data, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"]).copy()
        tensors[rec["name"]] = torch.from_numpy(arr)
    return tensors, header["meta"]


def save_checkpoint(state: TrainState, path) -> None:
    meta = {
        "train_config": state.cfg.to_dict(),
        "models": {k: _model_cfg_dict(v) for k, v in state.model_cfgs.items()},
        "epoch": state.epoch,
        "step": state.step,
        "step_in_epoch": state.step_in_epoch,
        "lr": state.opt_gen.param_groups[0]["lr"],
    }
    write_container(path, state_tensors(state), meta)


def load_checkpoint(path) -> TrainState:
    tensors, meta = read_container(path)
    cfg = TrainConfig(**meta["train_config"])
    model_cfgs = {k: _model_cfg(v) for k, v in meta["models"].items()}
    nets = {}
    for name, mcfg in model_cfgs.items():
        net = Generator(mcfg) if isinstance(mcfg, GeneratorConfig) else Discriminator(mcfg)
        prefix = f"{name}."
        sd = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
        net.load_state_dict(sd, strict=True)
        nets[name] = net
    state = assemble_state(cfg, nets, model_cfgs, tensors["rng.torch"])
    params = state.optimizer_params()
    for oname, opt in state.optimizers().items():
        for g in opt.param_groups:
            g["lr"] = meta["lr"]
        for pname, p in params[oname]:
            prefix = f"opt.{oname}.{pname}."
            st = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
            if st:
                opt.state[p] = st
    state.epoch, state.step, state.step_in_epoch = meta["epoch"], meta["step"], meta["step_in_epoch"]
    return state


def load_generator(path) -> tuple:
    """G (eval mode) and the training config stored in a checkpoint."""
    state = load_checkpoint(path)
    state.G.eval()
    return state.G, state.cfg
