"""Arrival files and small CSV helpers.

CSV columns: ``id,t,x1..xd,kind,p1..pd,sigma`` where ``p`` holds the
per-axis half extents (equal entries for cubes and balls).  The binary
cache is a 16-byte header (``PHRAIN01``, uint32 version, uint32 d), a
uint64 count, then the columns in little-endian order.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import UsageError
from .rain import KIND_CODES, KIND_NAMES, Rain

MAGIC = b"PHRAIN01"
VERSION = 1
_HEADER = struct.Struct("<8sII")
_COUNT = struct.Struct("<Q")


def arrival_header(d: int) -> list:
    return (["id", "t"] + [f"x{k + 1}" for k in range(d)] + ["kind"]
            + [f"p{k + 1}" for k in range(d)] + ["sigma"])


def write_rows(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return "" if v is None else v


def write_arrivals_csv(rain: Rain, path) -> Path:
    d = rain.d
    rows = ([int(rain.ids[k]), rain.t[k], *rain.x[k], KIND_NAMES[int(rain.kind[k])], *rain.ext[k], rain.sigma[k]]
            for k in range(len(rain)))
    return write_rows(path, arrival_header(d), rows)


def read_arrivals_csv(path) -> Rain:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        d = (len(header) - 4) // 2
        if header != arrival_header(d):
            raise UsageError(f"{path}: unexpected arrival header {header}")
        rows = list(r)
    if not rows:
        return Rain.empty(d)
    ids = np.array([int(row[0]) for row in rows])
    t = np.array([float(row[1]) for row in rows])
    x = np.array([[float(v) for v in row[2:2 + d]] for row in rows])
    kind = np.array([KIND_CODES[row[2 + d]] for row in rows])
    ext = np.array([[float(v) for v in row[3 + d:3 + 2 * d]] for row in rows])
    sigma = np.array([float(row[-1]) for row in rows])
    return Rain(t, x, kind, ext, sigma, ids=ids, d=d)


def write_cache(rain: Rain, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rain.d))
        fh.write(_COUNT.pack(len(rain)))
        for col, dt in ((rain.ids, "<i8"), (rain.t, "<f8"), (rain.x, "<f8"), (rain.kind, "i1"),
                        (rain.ext, "<f8"), (rain.sigma, "<f8"), (rain.u, "<f8")):
            fh.write(np.ascontiguousarray(col, dtype=dt).tobytes())
    return path


def read_cache(path) -> Rain:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size + _COUNT.size:
        raise UsageError(f"{path}: truncated cache")
    magic, version, d = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise UsageError(f"{path}: not a rain cache")
    if version != VERSION:
        raise UsageError(f"{path}: unsupported cache version {version}")
    (n,) = _COUNT.unpack_from(buf, _HEADER.size)
    off = _HEADER.size + _COUNT.size
    cols = []
    for dt, width in (("<i8", 1), ("<f8", 1), ("<f8", d), ("i1", 1), ("<f8", d), ("<f8", 1), ("<f8", 1)):
        count = n * width
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=off)
        off += arr.nbytes
        cols.append(arr.reshape(n, width) if width > 1 else arr)
    if off != len(buf):
        raise UsageError(f"{path}: trailing bytes in cache")
    ids, t, x, kind, ext, sigma, u = cols
    return Rain(t, x, kind, ext, sigma, ids=ids, u=u, d=d)
