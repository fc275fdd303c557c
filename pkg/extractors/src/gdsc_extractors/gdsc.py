"""GDSC descriptor file writer/reader.

Independent implementation of the interchange format consumed by the
mapping engine: magic ``GDSC``, u8 version=1, u8 metric (0 chi-squared,
1 euclidean), u16 reserved zero, u32 count, u32 dim, then count*dim
little-endian float32 values in frame order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"GDSC"
VERSION = 1
METRIC_CHI_SQUARED = 0
METRIC_EUCLIDEAN = 1
HEADER = struct.Struct("<4sBBHII")


class GdscFormatError(ValueError):
    pass


def write_gdsc(values: np.ndarray, path: str | os.PathLike,
               metric: int = METRIC_EUCLIDEAN) -> None:
    rows = np.ascontiguousarray(values, dtype="<f4")
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise GdscFormatError("need a non-empty (count, dim) array")
    if not np.all(np.isfinite(rows)):
        raise GdscFormatError("descriptors must be finite")
    n, dim = rows.shape
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, metric, 0, n, dim))
        fh.write(rows.tobytes())
    os.replace(tmp, path)


def read_gdsc(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < HEADER.size:
        raise GdscFormatError("truncated header")
    magic, version, metric, reserved, n, dim = HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION or reserved != 0:
        raise GdscFormatError("not a GDSC v1 file")
    body = raw[HEADER.size:]
    if len(body) != n * dim * 4:
        raise GdscFormatError("payload length mismatch")
    return np.frombuffer(body, dtype="<f4").reshape(n, dim).copy(), metric
