"""Checkpoint files: a key/value text manifest plus a raw float32 blob.

Manifest layout (``<stem>.ckpt``)::

    format = isoseg-checkpoint/1
    blob = <stem>.bin
    entry = <name> | <dtype> | <d0>x<d1>x... | <byte offset> | <byte length>
    meta.<key> = <value>

The blob is the concatenation of every entry as little-endian float32.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "isoseg-checkpoint/1"
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, str] | None = None) -> Path:
    path = Path(path)
    blob_path = path.with_suffix(".bin")
    lines = [f"format = {FORMAT}", f"blob = {blob_path.name}"]
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        if "|" in name or "\n" in name:
            raise CheckpointError(f"illegal parameter name {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        shape = "x".join(str(s) for s in np.shape(arr)) or "scalar"
        lines.append(f"entry = {name} | float32 | {shape} | {offset} | {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    for key, value in (meta or {}).items():
        lines.append(f"meta.{key} = {value}")
    blob_path.write_bytes(b"".join(chunks))
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    meta: dict[str, str] = {}
    entries = []
    blob_name = None
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" = ")
        if key == "format":
            if value != FORMAT:
                raise CheckpointError(f"unsupported checkpoint format {value!r}")
        elif key == "blob":
            blob_name = value
        elif key == "entry":
            entries.append([f.strip() for f in value.split("|")])
        elif key.startswith("meta."):
            meta[key[5:]] = value
        else:
            raise CheckpointError(f"unknown manifest key {key!r}")
    if blob_name is None:
        raise CheckpointError("manifest has no blob entry")
    blob = (path.parent / blob_name).read_bytes()
    for name, dtype, shape, offset, length in entries:
        if dtype != "float32":
            raise CheckpointError(f"{name}: unsupported dtype {dtype}")
        offset, length = int(offset), int(length)
        dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
        if offset + length > len(blob) or length != int(np.prod(dims)) * _DTYPE.itemsize:
            raise CheckpointError(f"{name}: manifest disagrees with blob size")
        arrays[name] = np.frombuffer(blob, dtype=_DTYPE, count=length // 4,
                                     offset=offset).reshape(dims).astype(np.float32)
    return arrays, meta
