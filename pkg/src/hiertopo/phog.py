"""Pyramid histogram of oriented gradients global descriptor.

Gradients come from central differences with replicated borders. Each
pyramid level l splits the image into 2^l x 2^l cells; every pixel votes
its gradient magnitude into the orientation bin of its cell. Histograms
are concatenated coarse to fine and L1-normalized, so the defaults
(60 bins over 360 degrees, 2 extra levels) give a 1260-long vector.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .descriptors import DescriptorSet, GlobalDescriptor, Metric
from .errors import DomainError, FormatError


@dataclass(frozen=True)
class PhogParams:
    bins: int = 60
    levels: int = 2
    angle_span: int = 360  # 180 or 360 degrees

    def __post_init__(self):
        if self.bins < 1:
            raise DomainError("bins must be positive")
        if self.levels < 0:
            raise DomainError("levels must be >= 0")
        if self.angle_span not in (180, 360):
            raise DomainError("angle_span must be 180 or 360")

    @property
    def length(self) -> int:
        return self.bins * sum(4**level for level in range(self.levels + 1))


def _gradients(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(image, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    return gx, gy


def compute_phog(image: np.ndarray, params: PhogParams = PhogParams()) -> GlobalDescriptor:
    """Descriptor over a grayscale intensity grid.

    A constant image has no gradients anywhere and yields the all-zero
    vector; otherwise the result is L1-normalized to sum 1.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DomainError("image must be a 2-D grayscale grid")
    if not np.all(np.isfinite(img)):
        raise DomainError("image intensities must be finite")
    h, w = img.shape
    finest = 2**params.levels
    if h < finest or w < finest:
        raise DomainError(
            f"image {h}x{w} smaller than the finest {finest}x{finest} grid"
        )

    gx, gy = _gradients(img)
    magnitude = np.hypot(gx, gy).ravel()
    span = np.deg2rad(params.angle_span)
    angle = np.arctan2(gy, gx).ravel()
    angle = np.mod(angle, span)
    bin_idx = np.minimum((angle / span * params.bins).astype(np.int64), params.bins - 1)
    # zero-magnitude pixels have undefined orientation and contribute nothing
    active = magnitude > 0.0
    bin_idx = bin_idx[active]
    magnitude = magnitude[active]

    ys, xs = np.divmod(np.flatnonzero(active), w)
    pieces = []
    for level in range(params.levels + 1):
        cells = 2**level
        cy = (ys * cells) // h
        cx = (xs * cells) // w
        flat = (cy * cells + cx) * params.bins + bin_idx
        hist = np.bincount(flat, weights=magnitude, minlength=cells * cells * params.bins)
        pieces.append(hist)
    vec = np.concatenate(pieces)
    total = vec.sum()
    if total > 0.0:
        vec /= total
    return GlobalDescriptor(vec, Metric.CHI_SQUARED)


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Binary 8-bit grayscale PGM (P5) reader."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise FormatError(f"not a binary PGM file: {os.fspath(path)}", offset=0)

    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError("malformed PGM header", offset=start)
        fields.append(int(token))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise FormatError("only 8-bit PGM supported", offset=2)
    expected = width * height
    if len(data) - pos < expected:
        raise FormatError("truncated PGM payload", offset=len(data))
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    return pixels.reshape(height, width).astype(np.float64)


def extract_directory(
    image_dir: str | os.PathLike, params: PhogParams = PhogParams()
) -> DescriptorSet:
    """Run the extractor over every .pgm in a directory, lexicographic order."""
    names = sorted(n for n in os.listdir(image_dir) if n.lower().endswith(".pgm"))
    if not names:
        raise DomainError(f"no .pgm images in {os.fspath(image_dir)}")
    rows = np.zeros((len(names), params.length), dtype=np.float32)
    for i, name in enumerate(names):
        desc = compute_phog(read_pgm(os.path.join(os.fspath(image_dir), name)), params)
        rows[i] = desc.values
    return DescriptorSet(dim=params.length, metric=Metric.CHI_SQUARED, values=rows,
                         source_label="phog")


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    img = np.asarray(image)
    clipped = np.clip(np.round(img), 0, 255).astype(np.uint8)
    h, w = clipped.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(clipped.tobytes())
