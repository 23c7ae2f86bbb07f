"""
Portable checkpoint: a JSON manifest followed by raw little-endian tensors.

    offset 0    4 bytes   magic b"AVCK"
    offset 4    4 bytes   uint32 format version (1)
    offset 8    8 bytes   uint64 header length n
    offset 16   n bytes   UTF-8 JSON header
    offset 16+n           payload: tensors back to back, C order

The header holds "config", "config_hash", "seed", "meta" and "tensors", a list
of {"name", "shape", "dtype", "offset", "nbytes"} with offsets relative to the
payload start and dtype as a numpy dtype string ("<f4", "<f8", ...).  Any
language with a JSON parser can read it.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"AVCK"
VERSION = 1


def save_checkpoint(path: str | Path, tensors: dict[str, torch.Tensor], config: dict, meta: dict | None = None) -> None:
    from .config import RunConfig

    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        arr = np.ascontiguousarray(t.detach().cpu().numpy())
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "config": config,
        "config_hash": RunConfig.from_dict(config).config_hash,
        "seed": config.get("seed"),
        "meta": meta or {},
        "tensors": entries,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", VERSION, len(head)))
        f.write(head)
        for raw in blobs:
            f.write(raw)


def read_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic)")
        version, n = struct.unpack("<IQ", f.read(12))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(f.read(n).decode("utf-8")), 16 + n


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    header, start = read_header(path)
    with open(path, "rb") as f:
        f.seek(start)
        payload = f.read()
    tensors = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise ValueError(f"{path}: tensor {e['name']} is truncated")
        arr = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.copy())
    return tensors, header
