"""Checkpoint container.

A checkpoint is an uncompressed zip archive:

* ``meta.json`` -- format version, step, config hash, optimizer scalars and
  any JSON-serialisable trainer state;
* ``params/<name>.t`` -- one tensor file per model parameter;
* ``optim/<slot>/<index>.t`` -- optimizer moment buffers.

Entries are written in sorted order with a fixed timestamp so identical
state always produces identical bytes.
"""

from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .errors import ValidationError
from .models import ModelBundle
from .optim import Optimizer
from .tensor_io import tensor_from_bytes, tensor_to_bytes

CHECKPOINT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    step: int
    config_hash: str
    params: Dict[str, np.ndarray]
    optimizer: Optional[Dict[str, Any]]
    extra: Dict[str, Any]


def checkpoint_name(step: int, config_hash: str) -> str:
    return f"ckpt-step{step:07d}-{config_hash}.ckpt"


def _write(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(
    path,
    model: ModelBundle,
    optimizer: Optional[Optimizer],
    step: int,
    config_hash: str,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {f"params/{name}.t": tensor_to_bytes(arr) for name, arr in model.state_dict().items()}

    optim_meta = None
    if optimizer is not None:
        optim_meta = {}
        for key, value in optimizer.state_dict().items():
            if isinstance(value, list) and value and isinstance(value[0], np.ndarray):
                for i, arr in enumerate(value):
                    entries[f"optim/{key}/{i:04d}.t"] = tensor_to_bytes(arr)
                optim_meta[key] = {"__buffers__": len(value)}
            else:
                optim_meta[key] = value

    meta = {
        "format": "iimt-checkpoint",
        "version": CHECKPOINT_VERSION,
        "step": int(step),
        "config_hash": config_hash,
        "optimizer": optim_meta,
        "extra": extra or {},
    }
    entries["meta.json"] = json.dumps(meta, sort_keys=True, indent=1).encode()

    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        for name in sorted(entries):
            _write(zf, name, entries[name])
    tmp.replace(path)
    return path


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != "iimt-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint ({meta.get('format')} v{meta.get('version')})")
        names = zf.namelist()
        params = {
            n[len("params/") : -len(".t")]: tensor_from_bytes(zf.read(n)) for n in names if n.startswith("params/")
        }
        optim = meta["optimizer"]
        if optim is not None:
            optim = dict(optim)
            for key, value in list(optim.items()):
                if isinstance(value, dict) and "__buffers__" in value:
                    optim[key] = [tensor_from_bytes(zf.read(f"optim/{key}/{i:04d}.t")) for i in range(value["__buffers__"])]
    return Checkpoint(meta["step"], meta["config_hash"], params, optim, meta["extra"])


def restore(path, model: ModelBundle, optimizer: Optional[Optimizer] = None) -> Checkpoint:
    ckpt = load_checkpoint(path)
    model.load_state_dict(ckpt.params)
    if optimizer is not None and ckpt.optimizer is not None:
        optimizer.load_state_dict(ckpt.optimizer)
    return ckpt
