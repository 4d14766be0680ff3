"""Binary velocity snapshots.

Layout (little-endian): magic ``b"MNSF"``, u32 version, u32 n, f64 extent,
f64 time_label, then ``3 * n**3`` f64 samples, component-major with ``x1``
varying fastest.  An optional ``<path>.json`` sidecar carries free-form
metadata.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .fields import GridSpec, VelocityField

MAGIC = b"MNSF"
VERSION = 1
_HEADER = struct.Struct("<4sIIdd")


class SnapshotError(ValueError):
    pass


class UnsupportedVersionError(SnapshotError):
    pass


def save_field(path, f: VelocityField, metadata: dict | None = None) -> Path:
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, f.grid.n, f.grid.extent, f.time_label)
    # [c, i1, i2, i3] -> [c, i3, i2, i1] so that i1 is the fastest index in C order
    payload = np.ascontiguousarray(f.samples.transpose(0, 3, 2, 1), dtype="<f8").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)
    if metadata is not None:
        sidecar = path.with_name(path.name + ".json")
        sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True))
    return path


def load_field(path) -> VelocityField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise SnapshotError(f"{path}: truncated header ({len(data)} bytes)")
    magic, version, n, extent, time_label = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version > VERSION or version == 0:
        raise UnsupportedVersionError(f"{path}: snapshot version {version} is not supported (this reader handles {VERSION})")
    try:
        grid = GridSpec(n, extent)
    except ValueError as exc:
        raise SnapshotError(f"{path}: invalid header: {exc}") from None
    expected = 3 * n**3 * 8
    body = data[_HEADER.size:]
    if len(body) != expected:
        raise SnapshotError(f"{path}: payload is {len(body)} bytes, header implies {expected}")
    samples = np.frombuffer(body, dtype="<f8").reshape(3, n, n, n).transpose(0, 3, 2, 1)
    if not np.all(np.isfinite(samples)):
        raise SnapshotError(f"{path}: non-finite samples in payload")
    try:
        return VelocityField(grid, samples, time_label)
    except ValueError as exc:
        raise SnapshotError(f"{path}: {exc}") from None


def load_metadata(path) -> dict | None:
    sidecar = Path(path).with_name(Path(path).name + ".json")
    if not sidecar.exists():
        return None
    return json.loads(sidecar.read_text())
