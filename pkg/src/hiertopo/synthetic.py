"""Deterministic synthetic worlds with independent continuity and
distinctiveness knobs.

A world is a route over Gaussian-ball regions in descriptor space. First
visits random-walk inside the region (teleporting with probability
jump_prob, which degrades continuity); revisits re-emit the stored
first-pass descriptors plus noise and perturbed copies of their local
features, and every revisit frame is linked in the ground truth to all
earlier frames that emitted the same walk step. Region separation is the
distinctiveness knob.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .descriptors import DescriptorSet, Metric
from .errors import DomainError
from .features import DESCRIPTOR_BYTES, FeatureSet

IMAGE_SIZE = 256
COORD_MARGIN = 20.0
DEFAULT_FEATURES_PER_IMAGE = 48


@dataclass(frozen=True)
class WorldSpec:
    n_frames: int
    dim: int
    regions: list[tuple[np.ndarray, float]]  # (center, spread radius)
    route: list[tuple[int, int]]  # (region index, frame count)
    step_sigma: float
    jump_prob: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0
    features_per_image: int = DEFAULT_FEATURES_PER_IMAGE

    def __post_init__(self):
        if sum(count for _, count in self.route) != self.n_frames:
            raise DomainError("route frame counts must sum to n_frames")
        if self.step_sigma <= 0:
            raise DomainError("step_sigma must be positive")
        if any(spread <= 0 for _, spread in self.regions):
            raise DomainError("region spreads must be positive")
        if not 0.0 <= self.jump_prob <= 1.0:
            raise DomainError("jump_prob must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be >= 0")
        for idx, _ in self.route:
            if not 0 <= idx < len(self.regions):
                raise DomainError(f"route references unknown region {idx}")


@dataclass
class World:
    spec: WorldSpec
    descriptors: DescriptorSet
    feature_sets: list[FeatureSet]
    positives: dict[int, set[int]]
    region_of_frame: np.ndarray

    @property
    def n_frames(self) -> int:
        return self.spec.n_frames


def _reflect_into_ball(point: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    offset = point - center
    r = float(np.linalg.norm(offset))
    if r <= radius or r == 0.0:
        return point
    reflected = 2 * radius - r
    reflected = max(reflected, 0.05 * radius)
    return center + offset * (reflected / r)


def _random_features(rng: np.random.Generator, count: int, image_id: int) -> FeatureSet:
    xy = rng.uniform(COORD_MARGIN, IMAGE_SIZE - COORD_MARGIN, size=(count, 2))
    desc = rng.integers(0, 256, size=(count, DESCRIPTOR_BYTES), dtype=np.uint8)
    return FeatureSet(image_id, xy.astype(np.float32), desc)


def _perturb_features(
    rng: np.random.Generator, source: FeatureSet, image_id: int
) -> FeatureSet:
    """Copy with <= 1 px keypoint jitter and <= 2 flipped descriptor bits."""
    xy = source.xy + rng.uniform(-1.0, 1.0, size=source.xy.shape).astype(np.float32)
    desc = source.descriptors.copy()
    n_flips = rng.integers(0, 3, size=len(source))
    for i, flips in enumerate(n_flips):
        for _ in range(int(flips)):
            bit = int(rng.integers(0, 8 * DESCRIPTOR_BYTES))
            desc[i, bit // 8] ^= 1 << (bit % 8)
    return FeatureSet(image_id, xy, desc)


def generate_world(spec: WorldSpec) -> World:
    """Build descriptors, local features, and ground truth for a route.

    Deterministic for a given spec: identical specs produce bit-identical
    outputs.
    """
    rng = np.random.default_rng(spec.seed)
    descs = np.zeros((spec.n_frames, spec.dim), dtype=np.float64)
    feature_sets: list[FeatureSet] = []
    positives: dict[int, set[int]] = {}
    region_of_frame = np.zeros(spec.n_frames, dtype=np.int64)

    # per region: list of (frame_id, clean descriptor) in first-pass order
    first_pass: dict[int, list[tuple[int, np.ndarray]]] = {}
    # first-pass frame -> frames that re-emitted it (earlier revisits)
    emitted_by_source: dict[int, list[int]] = {}

    frame = 0
    for region_idx, count in spec.route:
        center = np.asarray(spec.regions[region_idx][0], dtype=np.float64)
        spread = float(spec.regions[region_idx][1])
        if region_idx not in first_pass:
            first_pass[region_idx] = []
            point = center + rng.normal(0.0, spread / 4.0, size=spec.dim)
            point = _reflect_into_ball(point, center, spread)
            for _ in range(count):
                if rng.random() < spec.jump_prob:
                    direction = rng.normal(size=spec.dim)
                    direction /= np.linalg.norm(direction)
                    point = center + direction * (spread * rng.random())
                else:
                    point = _reflect_into_ball(
                        point + rng.normal(0.0, spec.step_sigma, size=spec.dim),
                        center,
                        spread,
                    )
                descs[frame] = point
                first_pass[region_idx].append((frame, point.copy()))
                feature_sets.append(
                    _random_features(rng, spec.features_per_image, frame)
                )
                region_of_frame[frame] = region_idx
                frame += 1
        else:
            sources = first_pass[region_idx]
            for k in range(count):
                src_frame, src_desc = sources[k % len(sources)]
                noise = (
                    rng.normal(0.0, spec.noise_sigma, size=spec.dim)
                    if spec.noise_sigma > 0
                    else 0.0
                )
                descs[frame] = src_desc + noise
                feature_sets.append(
                    _perturb_features(rng, feature_sets[src_frame], frame)
                )
                # earlier re-emissions of the same walk step are also true matches
                prior = emitted_by_source.setdefault(src_frame, [])
                positives[frame] = {src_frame, *prior}
                prior.append(frame)
                region_of_frame[frame] = region_idx
                frame += 1

    dset = DescriptorSet(
        dim=spec.dim,
        metric=Metric.EUCLIDEAN,
        values=descs.astype(np.float32),
        source_label=f"synthetic-seed{spec.seed}",
    )
    return World(spec, dset, feature_sets, positives, region_of_frame)


def chi_squared_variant(dset: DescriptorSet) -> DescriptorSet:
    """Non-negative shifted copy tagged for the chi-squared metric."""
    values = dset.values.astype(np.float64)
    lo = float(values.min())
    if lo < 0:
        values = values - lo
    return DescriptorSet(
        dim=dset.dim,
        metric=Metric.CHI_SQUARED,
        values=values.astype(np.float32),
        source_label=f"{dset.source_label}-chi2",
    )


def two_region_spec(
    n_frames: int = 400,
    dim: int = 16,
    separation: float = 10.0,
    spread: float = 0.5,
    step_sigma: float = 0.1,
    jump_prob: float = 0.0,
    noise_sigma: float = 0.01,
    seed: int = 0,
    revisit_fraction: float = 0.25,
    features_per_image: int = DEFAULT_FEATURES_PER_IMAGE,
) -> WorldSpec:
    """Convenience spec: region A, region B, then a revisit of A."""
    center_a = np.zeros(dim)
    center_b = np.zeros(dim)
    center_b[0] = separation
    revisit = int(n_frames * revisit_fraction)
    first = (n_frames - revisit) // 2
    second = n_frames - revisit - first
    return WorldSpec(
        n_frames=n_frames,
        dim=dim,
        regions=[(center_a, spread), (center_b, spread)],
        route=[(0, first), (1, second), (0, revisit)],
        step_sigma=step_sigma,
        jump_prob=jump_prob,
        noise_sigma=noise_sigma,
        seed=seed,
        features_per_image=features_per_image,
    )


def simplex_centers(n_regions: int, dim: int, separation: float) -> list[np.ndarray]:
    """Region centers with identical pairwise distances."""
    if n_regions > dim:
        raise DomainError("need dim >= n_regions for equidistant centers")
    centers = []
    for i in range(n_regions):
        c = np.zeros(dim)
        c[i] = separation / np.sqrt(2.0)
        centers.append(c)
    return centers
