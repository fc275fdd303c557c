"""Local binary features and geometric verification.

Keypoints are per-cell gradient-magnitude maxima; each carries a 256-bit
binary descriptor built from intensity comparisons on a fixed offset
pattern inside a 31x31 patch. Matching is mutual nearest neighbor in
Hamming space with a nearest/second-nearest ratio test, and candidate
matches are confirmed by RANSAC over two-point similarity transforms.

LFEA layout (little-endian): magic ``LFEA``, u8 version=1, then per image
u32 image_id, u32 count, and count records of (f32 x, f32 y, 32 descriptor
bytes).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FormatError

DESCRIPTOR_BYTES = 32
PATCH_RADIUS = 15
BORDER_MARGIN = 16
PATTERN_SEED = 42
MAX_FEATURES = 500
DEFAULT_RATIO = 0.8
DEFAULT_THRESHOLD_PX = 3.0
DEFAULT_ITERATIONS = 500
LIKELIHOOD_FLOOR = 0.1

LFEA_MAGIC = b"LFEA"
LFEA_VERSION = 1

_POPCOUNT = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint16)


def _comparison_pattern() -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(PATTERN_SEED)
    a = rng.integers(-PATCH_RADIUS, PATCH_RADIUS + 1, size=(256, 2))
    b = rng.integers(-PATCH_RADIUS, PATCH_RADIUS + 1, size=(256, 2))
    return a, b


_PATTERN_A, _PATTERN_B = _comparison_pattern()
_BIT_WEIGHTS = (1 << np.arange(8, dtype=np.uint8)[::-1]).astype(np.uint8)


@dataclass(frozen=True)
class LocalFeature:
    x: float
    y: float
    descriptor: bytes

    def __post_init__(self):
        if len(self.descriptor) != DESCRIPTOR_BYTES:
            raise DomainError(f"descriptor must be {DESCRIPTOR_BYTES} bytes")


@dataclass
class FeatureSet:
    """Keypoints of one image, stored as packed arrays for fast matching."""

    image_id: int
    xy: np.ndarray  # (N, 2) float32
    descriptors: np.ndarray  # (N, 32) uint8

    def __post_init__(self):
        xy = np.ascontiguousarray(self.xy, dtype=np.float32).reshape(-1, 2)
        desc = np.ascontiguousarray(self.descriptors, dtype=np.uint8).reshape(-1, DESCRIPTOR_BYTES)
        if xy.shape[0] != desc.shape[0]:
            raise DomainError("coordinate and descriptor counts differ")
        if xy.shape[0] > MAX_FEATURES:
            raise DomainError(f"feature count {xy.shape[0]} exceeds {MAX_FEATURES}")
        self.xy = xy
        self.descriptors = desc

    def __len__(self) -> int:
        return self.xy.shape[0]

    @property
    def words(self) -> np.ndarray:
        # uint64 view for vectorized popcount
        return self.descriptors.view(np.uint64)

    def features(self) -> list[LocalFeature]:
        return [
            LocalFeature(float(x), float(y), d.tobytes())
            for (x, y), d in zip(self.xy, self.descriptors)
        ]


def extract_local_features(
    image: np.ndarray,
    max_per_cell: int = 4,
    grid: int = 8,
    image_id: int = 0,
    magnitude_threshold: float = 1e-3,
) -> FeatureSet:
    """Per grid cell, keep the strongest-gradient pixels as keypoints.

    Keypoints closer than 16 px to a border are dropped so the descriptor
    patch always fits. A constant image produces an empty feature set.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if h < grid or w < grid:
        raise DomainError(f"image {h}x{w} smaller than the {grid}x{grid} grid")
    padded = np.pad(img, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2.0
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)
    mag[:BORDER_MARGIN, :] = 0.0
    mag[-BORDER_MARGIN:, :] = 0.0
    mag[:, :BORDER_MARGIN] = 0.0
    mag[:, -BORDER_MARGIN:] = 0.0

    ys: list[int] = []
    xs: list[int] = []
    for gy_i in range(grid):
        y0, y1 = (h * gy_i) // grid, (h * (gy_i + 1)) // grid
        for gx_i in range(grid):
            x0, x1 = (w * gx_i) // grid, (w * (gx_i + 1)) // grid
            cell = mag[y0:y1, x0:x1]
            if cell.size == 0:
                continue
            flat = cell.ravel()
            k = min(max_per_cell, flat.size)
            top = np.argpartition(flat, -k)[-k:]
            top = top[flat[top] > magnitude_threshold]
            top = top[np.argsort(flat[top])[::-1]]
            cy, cx = np.divmod(top, cell.shape[1])
            ys.extend((y0 + cy).tolist())
            xs.extend((x0 + cx).tolist())

    if not ys:
        return FeatureSet(image_id, np.zeros((0, 2)), np.zeros((0, DESCRIPTOR_BYTES)))
    order = np.lexsort((np.asarray(xs), np.asarray(ys)))
    ys_arr = np.asarray(ys)[order][:MAX_FEATURES]
    xs_arr = np.asarray(xs)[order][:MAX_FEATURES]
    desc = describe_patches(img, xs_arr, ys_arr)
    xy = np.stack([xs_arr, ys_arr], axis=1).astype(np.float32)
    return FeatureSet(image_id, xy, desc)


def describe_patches(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """256 intensity comparisons per keypoint on the fixed offset pattern."""
    ia = image[ys[:, None] + _PATTERN_A[:, 1], xs[:, None] + _PATTERN_A[:, 0]]
    ib = image[ys[:, None] + _PATTERN_B[:, 1], xs[:, None] + _PATTERN_B[:, 0]]
    bits = (ia < ib).astype(np.uint8).reshape(-1, DESCRIPTOR_BYTES, 8)
    return (bits * _BIT_WEIGHTS).sum(axis=2).astype(np.uint8)


def hamming_distance_matrix(query: FeatureSet, target: FeatureSet) -> np.ndarray:
    """(len(query), len(target)) matrix of Hamming distances in bits."""
    q = query.words
    t = target.words
    xor = q[:, None, :] ^ t[None, :, :]
    return np.bitwise_count(xor).sum(axis=2).astype(np.int32)


def _ratio_pass(dist: np.ndarray, nn: np.ndarray, ratio: float) -> np.ndarray:
    rows = np.arange(dist.shape[0])
    best = dist[rows, nn]
    if dist.shape[1] < 2:
        return np.ones(dist.shape[0], dtype=bool)
    masked = dist.copy()
    masked[rows, nn] = np.iinfo(np.int32).max
    second = masked.min(axis=1)
    # integer comparison avoids dividing by a zero second-best distance
    return best < ratio * second


def hamming_match(
    query: FeatureSet, target: FeatureSet, ratio: float = DEFAULT_RATIO
) -> np.ndarray:
    """Mutual nearest neighbors passing the ratio test on both sides.

    Returns an (M, 2) array of (query index, target index) pairs; each
    feature appears in at most one pair.
    """
    if not 0.0 < ratio < 1.0:
        raise DomainError("ratio must lie in (0, 1)")
    if len(query) == 0 or len(target) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    dist = hamming_distance_matrix(query, target)
    nn_qt = dist.argmin(axis=1)
    nn_tq = dist.argmin(axis=0)
    q_idx = np.arange(len(query))
    mutual = nn_tq[nn_qt] == q_idx
    ok_q = _ratio_pass(dist, nn_qt, ratio)
    ok_t = _ratio_pass(dist.T, nn_tq, ratio)
    keep = mutual & ok_q & ok_t[nn_qt]
    return np.stack([q_idx[keep], nn_qt[keep]], axis=1)


def match_points(query: FeatureSet, target: FeatureSet, pairs: np.ndarray):
    return query.xy[pairs[:, 0]].astype(np.float64), target.xy[pairs[:, 1]].astype(np.float64)


def geometric_inliers(
    src: np.ndarray,
    dst: np.ndarray,
    threshold_px: float = DEFAULT_THRESHOLD_PX,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> int:
    """Max inlier count over RANSAC two-point similarity-transform hypotheses.

    src and dst are (M, 2) matched coordinates; an inlier reprojects within
    threshold_px. Fewer than two correspondences cannot seed a hypothesis.
    """
    if threshold_px <= 0:
        raise DomainError("threshold_px must be positive")
    m = src.shape[0]
    if m < 2:
        return 0
    z_src = src[:, 0] + 1j * src[:, 1]
    z_dst = dst[:, 0] + 1j * dst[:, 1]

    rng = np.random.default_rng(seed)
    i0 = rng.integers(0, m, size=iterations)
    i1 = rng.integers(0, m, size=iterations)
    denom = z_src[i1] - z_src[i0]
    valid = np.abs(denom) > 1e-12
    if not np.any(valid):
        return 0
    i0, i1, denom = i0[valid], i1[valid], denom[valid]
    scale_rot = (z_dst[i1] - z_dst[i0]) / denom
    shift = z_dst[i0] - scale_rot * z_src[i0]
    pred = scale_rot[:, None] * z_src[None, :] + shift[:, None]
    err = np.abs(pred - z_dst[None, :])
    counts = (err < threshold_px).sum(axis=1)
    return int(counts.max())


def verify_match(
    query: FeatureSet,
    target: FeatureSet,
    ratio: float = DEFAULT_RATIO,
    threshold_px: float = DEFAULT_THRESHOLD_PX,
    iterations: int = DEFAULT_ITERATIONS,
    seed: int = 0,
) -> int:
    """Match two feature sets and return the geometric inlier count."""
    pairs = hamming_match(query, target, ratio)
    if pairs.shape[0] < 2:
        return 0
    src, dst = match_points(query, target, pairs)
    return geometric_inliers(src, dst, threshold_px, iterations, seed)


def image_likelihoods(
    query: FeatureSet, candidates: list[FeatureSet], ratio: float = DEFAULT_RATIO
) -> np.ndarray:
    """Smoothed match-count likelihood over candidate images; sums to 1."""
    if not candidates:
        raise DomainError("need at least one candidate image")
    scores = np.array(
        [hamming_match(query, cand, ratio).shape[0] for cand in candidates],
        dtype=np.float64,
    )
    scores += LIKELIHOOD_FLOOR
    return scores / scores.sum()


def match_score(query: FeatureSet, target: FeatureSet, ratio: float = DEFAULT_RATIO) -> int:
    return int(hamming_match(query, target, ratio).shape[0])


def _second_min(dist: np.ndarray, axis: int) -> np.ndarray:
    if dist.shape[axis] < 2:
        return np.full(np.min(dist, axis=axis).shape, np.iinfo(np.int32).max)
    two = np.partition(dist, 1, axis=axis)
    return np.take(two, 1, axis=axis)


def batch_match_counts(
    query: FeatureSet, targets: list[FeatureSet], ratio: float = DEFAULT_RATIO
) -> np.ndarray:
    """Mutual ratio-test match counts of one query against many images.

    Exactly hamming_match(query, t).shape[0] per target, but computed in
    one vectorized pass per group of equally sized targets.
    """
    if not 0.0 < ratio < 1.0:
        raise DomainError("ratio must lie in (0, 1)")
    counts = np.zeros(len(targets), dtype=np.int64)
    nq = len(query)
    if nq == 0:
        return counts
    by_size: dict[int, list[int]] = {}
    for idx, t in enumerate(targets):
        by_size.setdefault(len(t), []).append(idx)
    q_words = query.words
    for size, idxs in by_size.items():
        if size == 0:
            continue
        stacked = np.stack([targets[i].words for i in idxs])  # (G, Nt, W)
        xor = q_words[None, :, None, :] ^ stacked[:, None, :, :]
        dist = np.bitwise_count(xor).sum(axis=3).astype(np.int32)  # (G, Nq, Nt)

        nn_qt = dist.argmin(axis=2)  # (G, Nq)
        nn_tq = dist.argmin(axis=1)  # (G, Nt)
        q_idx = np.arange(nq)[None, :]
        mutual = np.take_along_axis(nn_tq, nn_qt, axis=1) == q_idx

        best_q = np.take_along_axis(dist, nn_qt[:, :, None], axis=2)[:, :, 0]
        second_q = _second_min(dist, axis=2)
        ok_q = best_q < ratio * second_q

        best_t = np.take_along_axis(dist, nn_tq[:, None, :], axis=1)[:, 0, :]
        second_t = _second_min(dist, axis=1)
        ok_t_all = best_t < ratio * second_t
        ok_t = np.take_along_axis(ok_t_all, nn_qt, axis=1)

        keep = mutual & ok_q & ok_t
        counts[np.asarray(idxs)] = keep.sum(axis=1)
    return counts


# -- LFEA serialization -------------------------------------------------------


def write_feature_sets(sets: list[FeatureSet], path: str | os.PathLike) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(LFEA_MAGIC)
        fh.write(bytes([LFEA_VERSION]))
        for fs in sets:
            fh.write(struct.pack("<II", fs.image_id, len(fs)))
            if len(fs):
                interleaved = np.zeros(
                    len(fs), dtype=[("x", "<f4"), ("y", "<f4"), ("d", "u1", DESCRIPTOR_BYTES)]
                )
                interleaved["x"] = fs.xy[:, 0]
                interleaved["y"] = fs.xy[:, 1]
                interleaved["d"] = fs.descriptors
                fh.write(interleaved.tobytes())
    os.replace(tmp, path)


def read_feature_sets(path: str | os.PathLike) -> list[FeatureSet]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != LFEA_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}", offset=0)
    if len(raw) < 5 or raw[4] != LFEA_VERSION:
        raise FormatError("unsupported LFEA version", offset=4)
    pos = 5
    record = np.dtype([("x", "<f4"), ("y", "<f4"), ("d", "u1", DESCRIPTOR_BYTES)])
    sets: list[FeatureSet] = []
    while pos < len(raw):
        if len(raw) - pos < 8:
            raise FormatError("truncated image header", offset=pos)
        image_id, count = struct.unpack_from("<II", raw, pos)
        pos += 8
        nbytes = count * record.itemsize
        if len(raw) - pos < nbytes:
            raise FormatError("truncated feature records", offset=pos)
        rows = np.frombuffer(raw, dtype=record, count=count, offset=pos)
        pos += nbytes
        xy = np.stack([rows["x"], rows["y"]], axis=1) if count else np.zeros((0, 2))
        desc = rows["d"].copy() if count else np.zeros((0, DESCRIPTOR_BYTES))
        sets.append(FeatureSet(image_id, xy, desc))
    return sets
