"""Versioned binary checkpoint container.

Layout::

    b"FRNTCKPT" | uint32 version | uint64 header length | JSON header | blobs

The header lists every blob (name, dtype, shape, offset, nbytes) plus the
architecture id, seed and step counters. Blobs are raw little-endian
tensor bytes, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

from .networks import architecture_id, build_model

MAGIC = b"FRNTCKPT"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().contiguous().numpy()


def write_container(path, header: dict, blobs: dict[str, torch.Tensor]) -> Path:
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name, tensor in blobs.items():
        arr = _to_numpy(tensor)
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        index.append(
            {"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    header = dict(header, format_version=VERSION, blobs=index)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", VERSION, len(head)))
            fh.write(head)
            for raw in chunks:
                fh.write(raw)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_container(path) -> tuple[dict, dict[str, torch.Tensor]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    base = 20 + hlen
    blobs = {}
    for entry in header["blobs"]:
        start = base + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated blob {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype("<" + entry["dtype"])).reshape(entry["shape"])
        blobs[entry["name"]] = torch.from_numpy(arr.copy())
    return header, blobs


def _flatten_optimizer(name: str, opt: torch.optim.Optimizer, blobs: dict) -> dict:
    sd = opt.state_dict()
    for pid, state in sd["state"].items():
        for key, val in state.items():
            blobs[f"opt.{name}.{pid}.{key}"] = torch.as_tensor(val)
    return {"param_groups": sd["param_groups"], "state_keys": {str(k): sorted(v) for k, v in sd["state"].items()}}


def _restore_optimizer(name: str, opt: torch.optim.Optimizer, meta: dict, blobs: dict) -> None:
    state = {}
    for pid, keys in meta["state_keys"].items():
        state[int(pid)] = {k: blobs[f"opt.{name}.{pid}.{k}"] for k in keys}
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def save_checkpoint(path, models: dict, optimizers: dict | None = None, **meta) -> Path:
    """Save named models (and optionally their optimizers) plus metadata fields."""
    blobs: dict[str, torch.Tensor] = {}
    arch = {}
    for name, model in models.items():
        arch[name] = {"class": type(model).__name__, "config": model.config}
        for pname, tensor in model.state_dict().items():
            blobs[f"model.{name}.{pname}"] = tensor
    opt_meta = {}
    for name, opt in (optimizers or {}).items():
        opt_meta[name] = _flatten_optimizer(name, opt, blobs)
    header = {"architecture_id": architecture_id(models), "models": arch, "optimizers": opt_meta, "meta": meta}
    return write_container(path, header, blobs)


def load_models(path, dtype=None) -> tuple[dict, dict]:
    """Rebuild every model stored in a checkpoint; returns (models, header)."""
    header, blobs = read_container(path)
    models = {}
    for name, spec in header["models"].items():
        model = build_model(spec["class"], spec["config"])
        _load_state(model, name, blobs)
        if dtype is not None:
            model.to(dtype)
        models[name] = model
    return models, header


def _load_state(model, name, blobs):
    prefix = f"model.{name}."
    state = {k[len(prefix):]: v for k, v in blobs.items() if k.startswith(prefix)}
    model.load_state_dict(state, strict=True)


def restore_into(path, models: dict, optimizers: dict | None = None) -> dict:
    """Load parameters (and optimizer state) into existing objects; returns header.

    Raises CheckpointError if the stored architecture differs from ``models``.
    """
    header, blobs = read_container(path)
    expected = architecture_id(models)
    if header["architecture_id"] != expected:
        raise CheckpointError(
            f"architecture mismatch: checkpoint has {header['architecture_id']!r}, models are {expected!r}"
        )
    for name, model in models.items():
        _load_state(model, name, blobs)
    for name, opt in (optimizers or {}).items():
        if name in header["optimizers"]:
            _restore_optimizer(name, opt, header["optimizers"][name], blobs)
    return header
