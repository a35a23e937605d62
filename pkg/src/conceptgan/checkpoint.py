"""Checkpoint container: version byte, JSON manifest, raw tensor payloads.

Layout::

    [1 byte version][4 bytes b"CGCK"][8 bytes LE manifest length][manifest JSON][payload]

The manifest maps component -> tensor name -> {dtype, shape, offset, nbytes}
(offsets relative to the payload start) and carries free-form metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

VERSION = 1
MAGIC = b"CGCK"
_HEADER = struct.Struct("<B4sQ")


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


def save_bundle(path, tensors: dict[str, dict[str, torch.Tensor]], meta: dict) -> None:
    entries, chunks, offset = {}, [], 0
    for comp in sorted(tensors):
        entries[comp] = {}
        for name in sorted(tensors[comp]):
            arr = tensors[comp][name].detach().cpu().contiguous().numpy()
            raw = arr.tobytes()
            entries[comp][name] = {
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "tensors": entries,
        "meta": meta,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(manifest, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(VERSION, MAGIC, len(blob)))
        fh.write(blob)
        fh.write(payload)
    tmp.replace(path)


def load_bundle(path) -> tuple[dict[str, dict[str, torch.Tensor]], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: file too short for a checkpoint header")
    version, magic, mlen = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, expected {VERSION}")
    start = _HEADER.size + mlen
    try:
        manifest = json.loads(raw[_HEADER.size:start])
        entries = manifest["tensors"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from exc
    payload = raw[start:]
    if hashlib.sha256(payload).hexdigest() != manifest.get("payload_sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    tensors = {}
    for comp, named in entries.items():
        tensors[comp] = {}
        for name, e in named.items():
            chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
            if len(chunk) != e["nbytes"]:
                raise CheckpointError(f"{path}: tensor {comp}.{name} runs past end of payload")
            arr = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
            tensors[comp][name] = torch.from_numpy(arr)
    return tensors, manifest["meta"]
