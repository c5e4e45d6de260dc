"""Binary parameter checkpoints.

Layout (all little-endian):

    bytes 0-3   magic ``GCKP``
    byte  4     format version (currently 1)
    bytes 5-12  uint64 length of the JSON index that follows
    index       UTF-8 JSON: {"params": {name: {"shape": [...], "offset": n,
                "count": n}}, "meta": {...}} with offsets counted in float64
                elements from the start of the payload
    payload     concatenated float64 values, row-major
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"GCKP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str, params: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    index: dict[str, dict] = {}
    offset = 0
    chunks = []
    for name, values in params.items():
        arr = np.asarray(values, dtype="<f8")
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr).reshape(arr.shape)
        index[name] = {"shape": list(arr.shape), "offset": offset,
                       "count": int(arr.size)}
        offset += arr.size
        chunks.append(arr.tobytes())
    header = json.dumps({"params": index, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    if blob[4] != VERSION:
        raise CheckpointError(f"{path}: unsupported version {blob[4]}")
    (hlen,) = struct.unpack("<Q", blob[5:13])
    header = json.loads(blob[13:13 + hlen].decode("utf-8"))
    payload = np.frombuffer(blob[13 + hlen:], dtype="<f8")
    params = {}
    for name, entry in header["params"].items():
        lo = entry["offset"]
        arr = payload[lo:lo + entry["count"]].reshape(entry["shape"])
        params[name] = arr.astype(np.float64)
    return params, header.get("meta", {})
