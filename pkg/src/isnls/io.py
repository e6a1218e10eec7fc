"""On-disk formats: ACLF field snapshots, full-precision CSV series, JSON manifests.

ACLF layout (little-endian): magic ``b"ACLF"``, u32 version, u32 dim,
u32 x dim point counts, f64 x dim box lengths, u8 flag (0 physical,
1 spectral), then the values as interleaved f64 (re, im) in row-major order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError
from .spectral import Field, Grid

__all__ = [
    "ACLF_MAGIC",
    "ACLF_VERSION",
    "write_aclf_array",
    "read_aclf_array",
    "write_aclf",
    "read_aclf",
    "write_series_csv",
    "read_series_csv",
    "to_jsonable",
    "canonical_json",
    "config_hash",
    "write_json",
    "read_json",
]

ACLF_MAGIC = b"ACLF"
ACLF_VERSION = 1


def write_aclf_array(path, values: np.ndarray, box: Sequence[float], spectral: bool) -> None:
    values = np.ascontiguousarray(values, dtype="<c16")
    n = values.shape
    if len(box) != len(n):
        raise FormatError("box lengths must match the array rank")
    head = ACLF_MAGIC + struct.pack("<II", ACLF_VERSION, len(n))
    head += struct.pack(f"<{len(n)}I", *n)
    head += struct.pack(f"<{len(n)}d", *[float(b) for b in box])
    head += struct.pack("<B", 1 if spectral else 0)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(values.tobytes(order="C"))


def read_aclf_array(path) -> tuple:
    """Return ``(values, box, spectral)``."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != ACLF_MAGIC:
        raise FormatError(f"{path}: not an ACLF file")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != ACLF_VERSION:
        raise FormatError(f"{path}: unsupported ACLF version {version}")
    if not 1 <= dim <= 8:
        raise FormatError(f"{path}: bad rank {dim}")
    off = 12
    try:
        n = struct.unpack_from(f"<{dim}I", data, off)
        off += 4 * dim
        box = struct.unpack_from(f"<{dim}d", data, off)
        off += 8 * dim
        (flag,) = struct.unpack_from("<B", data, off)
    except struct.error as exc:
        raise FormatError(f"{path}: truncated header") from exc
    off += 1
    if flag not in (0, 1):
        raise FormatError(f"{path}: bad representation flag {flag}")
    count = int(np.prod(n))
    if len(data) - off != 16 * count:
        raise FormatError(f"{path}: payload has {len(data) - off} bytes, expected {16 * count}")
    vals = np.frombuffer(data, dtype="<c16", count=count, offset=off).reshape(n)
    return vals.astype(np.complex128), tuple(box), bool(flag)


def write_aclf(path, field: Field) -> None:
    write_aclf_array(path, field.values, field.grid.box, field.spectral)


def read_aclf(path) -> Field:
    vals, box, spectral = read_aclf_array(path)
    try:
        grid = Grid(vals.shape, box)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return Field(grid, vals, spectral)


def write_series_csv(path, series: Mapping[str, Sequence[float]], columns: Sequence[str] | None = None) -> None:
    """Columns of equal length; floats written with ``repr`` (round-trip exact)."""
    columns = list(columns or series.keys())
    rows = zip(*[series[c] for c in columns])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_series_csv(path) -> dict:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        cols = [[] for _ in header]
        for row in r:
            for i, v in enumerate(row):
                cols[i].append(float(v))
    return {h: np.array(c) for h, c in zip(header, cols)}


def to_jsonable(obj):
    """Recursively convert numpy values and dataclass-like objects to JSON types."""
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return repr(v)
        return v
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if hasattr(obj, "as_dict"):
        return to_jsonable(obj.as_dict())
    return obj


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: Mapping) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
