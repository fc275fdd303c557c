"""Global descriptor types, distance metrics, similarity normalization,
location-descriptor update, and the GDSC binary file format.

GDSC layout (little-endian):
  bytes 0-3   magic ``GDSC``
  byte  4     version (1)
  byte  5     metric (0 = chi-squared, 1 = euclidean)
  bytes 6-7   reserved, zero
  bytes 8-11  u32 descriptor count N
  bytes 12-15 u32 dimension D
  then N*D float32 values in frame order
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, FormatError

CHI2_EPS = 1e-10
SPAN_EPS = 1e-12

GDSC_MAGIC = b"GDSC"
GDSC_VERSION = 1
GDSC_HEADER = struct.Struct("<4sBBHII")


class Metric(enum.Enum):
    CHI_SQUARED = 0
    EUCLIDEAN = 1

    @classmethod
    def from_tag(cls, tag: int) -> "Metric":
        try:
            return cls(tag)
        except ValueError:
            raise DomainError(f"unknown metric tag {tag}") from None

    @classmethod
    def parse(cls, name: str) -> "Metric":
        key = name.strip().lower().replace("-", "_")
        aliases = {
            "chi_squared": cls.CHI_SQUARED,
            "chi2": cls.CHI_SQUARED,
            "euclidean": cls.EUCLIDEAN,
            "l2": cls.EUCLIDEAN,
        }
        if key not in aliases:
            raise DomainError(f"unknown metric name {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class GlobalDescriptor:
    """Fixed-length real vector summarizing one image, plus its metric."""

    values: np.ndarray
    metric: Metric

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise DomainError("descriptor must be a non-empty 1-D vector")
        if not np.all(np.isfinite(vals)):
            raise DomainError("descriptor contains NaN or infinity")
        if self.metric is Metric.CHI_SQUARED and np.any(vals < 0):
            raise DomainError("chi-squared descriptors must be non-negative")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass
class DescriptorSet:
    """Ordered per-frame descriptors sharing one dimension and metric."""

    dim: int
    metric: Metric
    values: np.ndarray  # (N, dim) float32, frame order
    source_label: str = ""

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=np.float32)
        if vals.ndim != 2 or vals.shape[1] != self.dim:
            raise DimensionError(
                f"descriptor array shape {vals.shape} does not match dim {self.dim}"
            )
        if self.dim <= 0:
            raise DomainError("dim must be positive")
        if not np.all(np.isfinite(vals)):
            raise DomainError("descriptor set contains NaN or infinity")
        if self.metric is Metric.CHI_SQUARED and np.any(vals < 0):
            raise DomainError("chi-squared descriptor set must be non-negative")
        self.values = vals

    def __len__(self) -> int:
        return self.values.shape[0]

    def descriptor(self, i: int) -> GlobalDescriptor:
        return GlobalDescriptor(self.values[i].astype(np.float64), self.metric)


def chi_squared_distance(a, b) -> float:
    """0.5 * sum (a-b)^2 / (a+b+eps) over histogram entries."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("chi-squared distance requires non-negative entries")
    diff = a - b
    return float(0.5 * np.sum(diff * diff / (a + b + CHI2_EPS)))


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def chi_squared_distances(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Chi-squared distance from one query to every row of a matrix."""
    query = np.asarray(query, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    diff = rows - query
    return 0.5 * np.sum(diff * diff / (rows + query + CHI2_EPS), axis=1)


def euclidean_distances(query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    diff = rows - query
    return np.sqrt(np.sum(diff * diff, axis=1))


def distance(a, b, metric: Metric) -> float:
    if metric is Metric.CHI_SQUARED:
        return chi_squared_distance(a, b)
    return euclidean_distance(a, b)


def distances_to_rows(query: np.ndarray, rows: np.ndarray, metric: Metric) -> np.ndarray:
    if metric is Metric.CHI_SQUARED:
        return chi_squared_distances(query, rows)
    return euclidean_distances(query, rows)


def normalized_location_similarities(distances) -> np.ndarray:
    """Min-max normalize distances into similarities in [0, 1].

    s_i = 1 - (d_i - min) / (max - min). A degenerate span maps every
    similarity to 1; precision is enforced downstream by geometric
    verification.
    """
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise DomainError("need at least one distance")
    lo = float(d.min())
    hi = float(d.max())
    if hi - lo < SPAN_EPS:
        return np.ones_like(d)
    return 1.0 - (d - lo) / (hi - lo)


def update_location_descriptor(
    current: GlobalDescriptor | None, new_image: GlobalDescriptor
) -> GlobalDescriptor:
    """Running location descriptor: elementwise mean of the current location
    descriptor and the new image descriptor. An empty location adopts the
    image descriptor unchanged."""
    if current is None:
        return new_image
    if current.dim != new_image.dim:
        raise DimensionError(
            f"dimension mismatch: {current.dim} vs {new_image.dim}"
        )
    if current.metric is not new_image.metric:
        raise DimensionError("metric mismatch between location and image descriptor")
    return GlobalDescriptor((current.values + new_image.values) / 2.0, current.metric)


def write_descriptor_set(dset: DescriptorSet, path: str | os.PathLike) -> None:
    """Serialize to the GDSC byte format (atomic: temp file + rename)."""
    n = len(dset)
    header = GDSC_HEADER.pack(
        GDSC_MAGIC, GDSC_VERSION, dset.metric.value, 0, n, dset.dim
    )
    payload = np.ascontiguousarray(dset.values, dtype="<f4").tobytes()
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def read_descriptor_set(path: str | os.PathLike, source_label: str | None = None) -> DescriptorSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < GDSC_HEADER.size:
        raise FormatError("truncated GDSC header", offset=len(raw))
    magic, version, metric_tag, reserved, n, dim = GDSC_HEADER.unpack_from(raw, 0)
    if magic != GDSC_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != GDSC_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if metric_tag not in (0, 1):
        raise FormatError(f"unknown metric tag {metric_tag}", offset=5)
    if reserved != 0:
        raise FormatError("reserved bytes must be zero", offset=6)
    expected = n * dim * 4
    body = raw[GDSC_HEADER.size:]
    if len(body) != expected:
        raise FormatError(
            f"payload holds {len(body)} bytes, expected {expected}",
            offset=GDSC_HEADER.size + min(len(body), expected),
        )
    values = np.frombuffer(body, dtype="<f4").reshape(n, dim).copy()
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values.ravel()))[0])
        raise FormatError("non-finite descriptor value", offset=GDSC_HEADER.size + 4 * bad)
    label = source_label if source_label is not None else os.path.basename(os.fspath(path))
    return DescriptorSet(dim=dim, metric=Metric.from_tag(metric_tag), values=values,
                         source_label=label)
