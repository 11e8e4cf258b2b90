"""Raw volume files with a text sidecar.

``<name>.vol`` holds the little-endian payload, ``<name>.volmeta`` the header::

    dims = 48 48 48
    dtype = float32
    spacing = 1 1 1
    role = t1
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..phantom import CHANNELS, Subject

_DTYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("u1")}


class VolumeFormatError(ValueError):
    pass


def _stem(path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".vol", ".volmeta") else path


def save_volume(path, volume: np.ndarray, spacing=(1.0, 1.0, 1.0), role: str = "intensity") -> Path:
    stem = _stem(path)
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise VolumeFormatError(f"volumes are 3-D, got shape {volume.shape}")
    if volume.dtype == np.uint8 or volume.dtype == bool:
        dtype = "uint8"
    elif volume.dtype.kind == "f":
        dtype = "float32"
    else:
        raise VolumeFormatError(f"unsupported volume dtype {volume.dtype}")
    stem.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(volume, dtype=_DTYPES[dtype]).tobytes()
    stem.with_suffix(".vol").write_bytes(payload)
    meta = [
        "dims = " + " ".join(str(d) for d in volume.shape),
        f"dtype = {dtype}",
        "spacing = " + " ".join(repr(float(s)) for s in spacing),
        f"role = {role}",
    ]
    stem.with_suffix(".volmeta").write_text("\n".join(meta) + "\n")
    return stem.with_suffix(".vol")


def read_meta(path) -> dict:
    stem = _stem(path)
    meta = {}
    for line in stem.with_suffix(".volmeta").read_text().splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeFormatError(f"malformed sidecar line {line!r}")
        meta[key.strip()] = value.strip()
    for key in ("dims", "dtype"):
        if key not in meta:
            raise VolumeFormatError(f"sidecar missing {key!r}")
    meta["dims"] = tuple(int(v) for v in meta["dims"].split())
    meta["spacing"] = tuple(float(v) for v in meta.get("spacing", "1 1 1").split())
    if meta["dtype"] not in _DTYPES:
        raise VolumeFormatError(f"unsupported dtype {meta['dtype']!r}")
    return meta


def load_volume(path) -> tuple[np.ndarray, dict]:
    stem = _stem(path)
    meta = read_meta(stem)
    dtype = _DTYPES[meta["dtype"]]
    raw = stem.with_suffix(".vol").read_bytes()
    expected = int(np.prod(meta["dims"])) * dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(f"{stem}.vol: payload is {len(raw)} bytes, header implies {expected}")
    vol = np.frombuffer(raw, dtype=dtype).reshape(meta["dims"])
    vol = vol.astype(np.float32 if meta["dtype"] == "float32" else np.uint8)
    return vol, meta


def save_subject(directory, subject: Subject) -> Path:
    d = Path(directory) / subject.name
    for ch, role in enumerate(CHANNELS):
        save_volume(d / role, subject.image[ch], subject.spacing, role)
    save_volume(d / "labels", subject.labels.astype(np.uint8), subject.spacing, "labels")
    save_volume(d / "mask", subject.mask.astype(np.uint8), subject.spacing, "mask")
    return d


def load_subject(directory) -> Subject:
    d = Path(directory)
    chans = []
    spacing = (1.0, 1.0, 1.0)
    for role in CHANNELS:
        vol, meta = load_volume(d / role)
        chans.append(vol)
        spacing = meta["spacing"]
    image = np.stack(chans)
    if (d / "labels.vol").exists():
        labels = load_volume(d / "labels")[0]
    else:
        labels = np.zeros(image.shape[1:], dtype=np.uint8)
    if (d / "mask.vol").exists():
        mask = load_volume(d / "mask")[0].astype(bool)
    else:
        mask = (image != 0).any(axis=0)
    return Subject(d.name, image, labels, mask, spacing)


def load_cohort(directory) -> list[Subject]:
    d = Path(directory)
    subs = sorted(p for p in d.iterdir() if p.is_dir() and (p / "t1.vol").exists())
    if not subs:
        raise VolumeFormatError(f"no subject directories under {d}")
    return [load_subject(p) for p in subs]
