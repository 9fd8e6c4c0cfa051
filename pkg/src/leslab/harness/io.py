"""Snapshot files for gridded fields and covers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..covers import cover_from_json, cover_to_json
from ..fields import GriddedField

MAGIC = b"LESFIELD1\n"


class SnapshotError(ValueError):
    pass


def write_field(f, path):
    """Magic line, one JSON header line, then little-endian float64 values in C order."""
    header = {"R_max": f.R_max, "h": f.h, "components": f.components, "N": f.N, "time": f.time}
    data = np.ascontiguousarray(f.values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(data.tobytes())
    return Path(path)


def read_field(path):
    with open(path, "rb") as fh:
        if fh.readline() != MAGIC:
            raise SnapshotError(f"{path}: not a field snapshot")
        try:
            header = json.loads(fh.readline())
            R, h, comps, N, t = (header[k] for k in ("R_max", "h", "components", "N", "time"))
        except (ValueError, KeyError) as e:
            raise SnapshotError(f"{path}: malformed header ({e})") from None
        if comps not in (1, 3):
            raise SnapshotError(f"{path}: component count {comps} is not 1 or 3")
        raw = fh.read()
    shape = (N, N, N) if comps == 1 else (3, N, N, N)
    expect = 8 * int(np.prod(shape))
    if len(raw) != expect:
        raise SnapshotError(f"{path}: payload has {len(raw)} bytes, header implies {expect}")
    values = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)
    return GriddedField(float(R), float(h), values, float(t))


def write_cover(c, path):
    Path(path).write_text(cover_to_json(c))
    return Path(path)


def read_cover(path):
    return cover_from_json(Path(path).read_text())


def snapshot_io(obj, path, direction):
    """direction 'write' stores obj (field or cover); 'read' loads by file content."""
    if direction == "write":
        if isinstance(obj, GriddedField):
            return write_field(obj, path)
        return write_cover(obj, path)
    if direction == "read":
        with open(path, "rb") as fh:
            head = fh.read(len(MAGIC))
        return read_field(path) if head == MAGIC else read_cover(path)
    raise ValueError(f"direction must be 'read' or 'write', got {direction!r}")
