"""Flat binary parameter checkpoints.

Layout: magic ``b"SSMB"``, little-endian ``uint32`` header length, a UTF-8
JSON header ``{"kind", "dims", "seed", "fields": [[name, shape], ...]}``,
then every field as row-major little-endian float64 in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSMB"


def save_checkpoint(path, kind: str, dims: dict, seed: int, params: dict) -> None:
    header = {
        "kind": kind,
        "dims": dims,
        "seed": int(seed),
        "fields": [[name, list(arr.shape)] for name, arr in params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    tmp.replace(path)


def load_checkpoint(path):
    """Returns ``(kind, dims, seed, params)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    (hlen,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + hlen])
    offset = 8 + hlen
    params = {}
    for name, shape in header["fields"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[name] = arr.astype(float)
        offset += 8 * count
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return header["kind"], header["dims"], header["seed"], params
