"""Checkpoint files: JSON header plus a manifest of raw little-endian blobs."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .nets import ModelConfig, make_model

MAGIC = b"EVCORRIDOR-CKPT1\n"

_DTYPES = {"float32": "<f4", "float64": "<f8", "int64": "<i8", "bool": "|b1"}


def save_checkpoint(path: str | Path, model: torch.nn.Module,
                    epoch: int = 0, val_loss: float = float("nan"),
                    extra: dict | None = None) -> None:
    state = model.state_dict()
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported tensor dtype {dtype}")
        raw = np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes()
        manifest.append({"name": name, "dtype": dtype,
                         "shape": list(arr.shape), "offset": offset,
                         "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": model.cfg.to_dict(),
        "epoch": epoch,
        "val_loss": val_loss,
        "manifest": manifest,
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, indent=1, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str | Path) -> tuple[torch.nn.Module, dict]:
    """Rebuild the model from a checkpoint; returns (model, header)."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    header = json.loads(raw[off:off + hlen])
    base = off + hlen
    cfg = ModelConfig.from_dict(header["config"])
    model = make_model(cfg)
    state = {}
    for item in header["manifest"]:
        dt = np.dtype(_DTYPES[item["dtype"]])
        count = int(np.prod(item["shape"])) if item["shape"] else 1
        arr = np.frombuffer(raw, dtype=dt, count=count,
                            offset=base + item["offset"])
        arr = arr.reshape(item["shape"]).astype(item["dtype"], copy=True)
        state[item["name"]] = torch.from_numpy(arr)
    model.load_state_dict(state)
    model.eval()
    return model, header
