"""Self-describing binary checkpoint: a JSON header line then raw little-endian float64."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"TRAJLOC-CKPT 1\n"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = a.tobytes()
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"dtype": "<f8", "arrays": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":"))
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(header.encode() + b"\n")
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a trajloc checkpoint")
    end = data.index(b"\n", len(MAGIC))
    header = json.loads(data[len(MAGIC):end])
    body = data[end + 1:]
    arrays = {}
    for e in header["arrays"]:
        raw = body[e["offset"]:e["offset"] + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated array {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).astype(float)
    return arrays, header["meta"]
