"""Minimal deterministic container for named arrays.

Layout::

    8 bytes   magic  b"OWSSLTNS"
    4 bytes   little-endian uint32 header length H
    H bytes   UTF-8 JSON header: {"kind", "version", "tensors": [
                  {"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    ...       raw little-endian array bytes, C order, concatenated

Files contain no timestamps, so equal inputs produce equal bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OWSSLTNS"


def write_tensors(path, tensors: dict[str, np.ndarray], kind: str, version: int) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        entries.append({
            "name": name,
            "dtype": a.dtype.str,
            "shape": list(a.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "version": version, "tensors": entries},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def read_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    (hlen,) = struct.unpack("<I", data[8:12])
    meta = json.loads(data[12:12 + hlen])
    base = 12 + hlen
    out = {}
    for e in meta["tensors"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        out[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return out, meta
