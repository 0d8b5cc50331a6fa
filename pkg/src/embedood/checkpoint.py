"""Self-describing parameter container files.

Layout: one header line ``EMBOODCKPT 1 <manifest_bytes>``, a UTF-8 JSON
manifest listing (name, shape, byte offset) per array plus free-form
metadata, then the raw little-endian float64 payload. Offsets are
relative to the start of the payload.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = "EMBOODCKPT"
VERSION = 1


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None):
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps(
        {"arrays": entries, "meta": meta or {}}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION} {len(manifest)}\n".encode("ascii"))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 3 or header[0] != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if int(header[1]) != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header[1]}")
        manifest = json.loads(fh.read(int(header[2])).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in manifest["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).copy()
    return arrays, manifest["meta"]
