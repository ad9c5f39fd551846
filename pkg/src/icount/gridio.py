"""File formats: DGRID density grids, LMAP label maps, FM feature stacks.

All binary formats are little-endian: a 4-byte ASCII magic, u32 dimensions,
then the payload (f32 for grids/features, u32 for labels), row-major.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

DGRID_MAGIC = b"DG01"
LMAP_MAGIC = b"LM01"
FMAP_MAGIC = b"FM01"


class FormatError(ValueError):
    """Raised when a binary payload does not match its declared format."""


def save_dgrid(path, grid) -> None:
    grid = np.asarray(grid, dtype=np.float32)
    if grid.ndim != 2:
        raise FormatError(f"density grid must be 2-D, got shape {grid.shape}")
    h, w = grid.shape
    with open(path, "wb") as f:
        f.write(DGRID_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(grid.astype("<f4").tobytes())


def load_dgrid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != DGRID_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    h, w = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=12).reshape(h, w)
    return values.astype(np.float64)


def save_lmap(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise FormatError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.min(initial=0) < 0:
        raise FormatError("label map contains negative labels")
    h, w = labels.shape
    with open(path, "wb") as f:
        f.write(LMAP_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(labels.astype("<u4").tobytes())


def load_lmap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != LMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    h, w = struct.unpack("<II", data[4:12])
    expected = 12 + 4 * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    labels = np.frombuffer(data, dtype="<u4", offset=12).reshape(h, w)
    return labels.astype(np.int32)


def save_fmap(path, features) -> None:
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 3:
        raise FormatError(f"feature stack must be 3-D, got shape {features.shape}")
    c, h, w = features.shape
    with open(path, "wb") as f:
        f.write(FMAP_MAGIC)
        f.write(struct.pack("<III", c, h, w))
        f.write(features.astype("<f4").tobytes())


def load_fmap(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FMAP_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    c, h, w = struct.unpack("<III", data[4:16])
    expected = 16 + 4 * c * h * w
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(c, h, w)
    return values.astype(np.float64)


def regions_to_json(regions) -> str:
    rows = [
        {"id": int(r.id), "sum": float(r.sum), "area": int(r.area), "kind": r.kind}
        for r in regions
    ]
    return json.dumps({"regions": rows})


def save_region_table(path, regions) -> None:
    Path(path).write_text(regions_to_json(regions))


def rle_encode_rows(labels) -> list[list[list[int]]]:
    """Encode each row of a label map as [label, run_length] pairs."""
    labels = np.asarray(labels)
    rows = []
    for row in labels:
        runs = []
        boundaries = np.flatnonzero(np.diff(row)) + 1
        starts = np.concatenate(([0], boundaries))
        ends = np.concatenate((boundaries, [len(row)]))
        for s, e in zip(starts, ends):
            runs.append([int(row[s]), int(e - s)])
        rows.append(runs)
    return rows


def rle_decode_rows(rows, width: int) -> np.ndarray:
    out = np.empty((len(rows), width), dtype=np.int32)
    for i, runs in enumerate(rows):
        pos = 0
        for label, count in runs:
            out[i, pos : pos + count] = label
            pos += count
        if pos != width:
            raise FormatError(f"row {i}: run lengths sum to {pos}, expected {width}")
    return out
