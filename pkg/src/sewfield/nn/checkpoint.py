"""Binary checkpoints: magic, version, JSON header, little-endian float64 payload.

Layout::

    b"SEWFIELD"  | uint32 version | uint64 header length | header JSON | payload

The header holds ``{"config": ..., "meta": ..., "tensors": [{"name", "shape",
"offset", "count"}]}``; offsets count float64 values from the payload start.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"SEWFIELD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, config: dict | None = None, meta: dict | None = None) -> None:
    directory, chunks, offset = [], [], 0
    for name, t in tensors.items():
        arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
        arr = np.ascontiguousarray(arr, dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"config": config or {}, "meta": meta or {}, "tensors": directory}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> tuple[dict, dict, dict]:
    """Returns ``(tensors, config, meta)``; tensors are float64 torch tensors."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen])
    payload = np.frombuffer(raw[20 + hlen:], dtype="<f8")
    tensors = {}
    for entry in header["tensors"]:
        lo = entry["offset"]
        vals = payload[lo:lo + entry["count"]]
        if len(vals) != entry["count"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = torch.from_numpy(vals.reshape(entry["shape"]).astype(np.float64))
    return tensors, header["config"], header["meta"]


def module_tensors(module: torch.nn.Module, prefix: str = "") -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_module(module: torch.nn.Module, tensors: dict, prefix: str = "") -> None:
    state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    module.load_state_dict(state)
