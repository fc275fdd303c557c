"""Hierarchical topological map engine.

Images aggregate into locations while their distance to the active
location descriptor stays below the aggregation threshold. Loop-closure
candidates are proposed at the location level from min-max normalized
similarities, scored at the image level by a Bayes filter over all
processed images, and confirmed by geometric verification.

Three search modes share the aggregation and verification machinery:
  normal            location candidates -> belief filter -> verify
  oracle-locations  candidate locations come from ground truth
  flat-brute-force  exhaustive image nearest neighbor -> verify
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field

import numpy as np

from . import belief as bf
from . import features as lf
from .descriptors import Metric, distances_to_rows, normalized_location_similarities
from .errors import DimensionError, DomainError

STAGES = ("search", "likelihood", "belief", "verify", "update")


class MapMode(enum.Enum):
    NORMAL = "normal"
    ORACLE_LOCATIONS = "oracle-locations"
    FLAT_BRUTE_FORCE = "flat-brute-force"

    @classmethod
    def parse(cls, name: str) -> "MapMode":
        key = name.strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == key:
                return mode
        raise DomainError(f"unknown mode {name!r}")


class EventKind(enum.Enum):
    NEW_LOCATION = "new_location"
    AGGREGATED = "aggregated"
    LOOP_CLOSURE = "loop_closure"


@dataclass(frozen=True)
class MapConfig:
    t_nn: float
    t_llc: float = 0.8
    t_inliers: int = 30
    temporal_mask: int = 20
    margin_m: int = 10
    t_ci: int = 6
    match_ratio: float = lf.DEFAULT_RATIO
    verify_threshold_px: float = lf.DEFAULT_THRESHOLD_PX
    verify_iterations: int = lf.DEFAULT_ITERATIONS

    def __post_init__(self):
        if self.t_nn <= 0:
            raise DomainError("t_nn must be positive")
        if not 0.0 <= self.t_llc <= 1.0:
            raise DomainError("t_llc must lie in [0, 1]")
        if self.t_inliers < 0:
            raise DomainError("t_inliers must be >= 0")
        if self.temporal_mask < 0:
            raise DomainError("temporal_mask must be >= 0")
        if self.margin_m < 0:
            raise DomainError("margin_m must be >= 0")
        if self.t_ci < 1:
            raise DomainError("t_ci must be >= 1")


@dataclass
class MapEvent:
    frame: int
    kind: EventKind
    location_id: int
    image_id: int = -1
    inliers: int = -1
    candidates: list[int] = field(default_factory=list)
    stage_ns: dict[str, int] = field(default_factory=dict)

    @property
    def total_ns(self) -> int:
        return sum(self.stage_ns.values())


@dataclass
class Location:
    id: int
    image_ids: list[int]
    descriptor: np.ndarray  # float64 running mean
    newest_frame: int


class _Rows:
    """Row matrix with amortized append."""

    def __init__(self, dim: int, capacity: int = 64):
        self._data = np.zeros((capacity, dim), dtype=np.float64)
        self._n = 0

    def append(self, row: np.ndarray) -> int:
        if self._n == self._data.shape[0]:
            grown = np.zeros((2 * self._data.shape[0], self._data.shape[1]))
            grown[: self._n] = self._data
            self._data = grown
        self._data[self._n] = row
        self._n += 1
        return self._n - 1

    def set(self, i: int, row: np.ndarray) -> None:
        self._data[i] = row

    @property
    def view(self) -> np.ndarray:
        return self._data[: self._n]

    def __len__(self) -> int:
        return self._n


class HierarchicalMap:
    """Online two-level map over a stream of described images."""

    def __init__(
        self,
        config: MapConfig,
        dim: int,
        metric: Metric,
        mode: MapMode = MapMode.NORMAL,
        seed: int = 0,
        legacy_evolution: bool = False,
        ground_truth: dict[int, set[int]] | None = None,
    ):
        if mode is MapMode.ORACLE_LOCATIONS and ground_truth is None:
            raise DomainError("oracle-locations mode requires ground truth")
        self.config = config
        self.dim = dim
        self.metric = metric
        self.mode = mode
        self.seed = seed
        self.legacy_evolution = legacy_evolution
        self.ground_truth = ground_truth or {}

        self.kernel = bf.make_diffusion_kernel()
        self.locations: list[Location] = []
        self.active_id: int = -1
        self.frame_count: int = 0
        self.events: list[MapEvent] = []
        self.beliefs = np.zeros(0)

        self._image_rows = _Rows(dim)
        self._location_rows = _Rows(dim)
        self._features: list[lf.FeatureSet] = []
        self._location_of_image = np.zeros(0, dtype=np.int64)
        self._loc_of_image_buf = np.zeros(64, dtype=np.int64)
        self._newest_frames = np.zeros(0, dtype=np.int64)

    # -- bookkeeping -----------------------------------------------------

    @property
    def n_images(self) -> int:
        return self.frame_count

    def location_of_image(self, image_id: int) -> int:
        return int(self._loc_of_image_buf[image_id])

    def location_sizes(self) -> list[int]:
        return [len(loc.image_ids) for loc in self.locations]

    def membership(self) -> dict[int, list[int]]:
        return {loc.id: list(loc.image_ids) for loc in self.locations}

    def _assign(self, image_id: int, loc: Location, values: np.ndarray) -> None:
        loc.image_ids.append(image_id)
        loc.descriptor = (loc.descriptor + values) / 2.0
        loc.newest_frame = image_id
        self._location_rows.set(loc.id, loc.descriptor)
        self._newest_frames[loc.id] = image_id
        self._loc_of_image_buf[image_id] = loc.id

    def _create_location(self, image_id: int, values: np.ndarray) -> Location:
        loc = Location(
            id=len(self.locations),
            image_ids=[image_id],
            descriptor=values.copy(),
            newest_frame=image_id,
        )
        self.locations.append(loc)
        self._location_rows.append(loc.descriptor)
        self._newest_frames = np.append(self._newest_frames, image_id)
        self._loc_of_image_buf[image_id] = loc.id
        return loc

    def _grow_image_buffers(self) -> None:
        if self.frame_count == self._loc_of_image_buf.size:
            grown = np.zeros(2 * self._loc_of_image_buf.size, dtype=np.int64)
            grown[: self.frame_count] = self._loc_of_image_buf
            self._loc_of_image_buf = grown

    # -- candidate selection ----------------------------------------------

    def location_distances(self, values: np.ndarray) -> np.ndarray:
        return distances_to_rows(values, self._location_rows.view, self.metric)

    def candidate_locations(self, values: np.ndarray) -> list[int]:
        """Locations with normalized similarity above t_llc, excluding the
        active location and any location whose newest image is within the
        temporal mask of the query frame."""
        if not self.locations:
            raise DomainError("map is empty")
        dists = self.location_distances(values)
        return self._filter_candidates(normalized_location_similarities(dists))

    def _filter_candidates(self, sims: np.ndarray) -> list[int]:
        frame = self.frame_count
        ids = np.flatnonzero(sims > self.config.t_llc)
        keep = []
        for lid in ids:
            if lid == self.active_id:
                continue
            if frame - self._newest_frames[lid] <= self.config.temporal_mask:
                continue
            keep.append(int(lid))
        return keep

    def _oracle_candidates(self, frame: int) -> list[int]:
        positives = self.ground_truth.get(frame)
        if not positives:
            return []
        ids = {
            int(self._loc_of_image_buf[p]) for p in positives if p < self.frame_count
        }
        keep = []
        for lid in sorted(ids):
            if lid == self.active_id:
                continue
            if frame - self._newest_frames[lid] <= self.config.temporal_mask:
                continue
            keep.append(lid)
        return keep

    def should_aggregate(self, values: np.ndarray) -> bool:
        if self.active_id < 0:
            return False
        d = float(
            distances_to_rows(
                values, self.locations[self.active_id].descriptor[None, :], self.metric
            )[0]
        )
        return d < self.config.t_nn

    # -- frame cycle -------------------------------------------------------

    def process_image(self, values: np.ndarray, features: lf.FeatureSet) -> MapEvent:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.dim,):
            raise DimensionError(
                f"descriptor shape {values.shape} does not match map dim {self.dim}"
            )
        frame = self.frame_count
        self._grow_image_buffers()
        stage_ns: dict[str, int] = dict.fromkeys(STAGES, 0)

        if self.mode is MapMode.FLAT_BRUTE_FORCE:
            event = self._process_flat(frame, values, features, stage_ns)
        else:
            event = self._process_hierarchical(frame, values, features, stage_ns)

        self._image_rows.append(values)
        self._features.append(features)
        self.frame_count += 1
        self.events.append(event)
        return event

    def _process_hierarchical(
        self,
        frame: int,
        values: np.ndarray,
        features: lf.FeatureSet,
        stage_ns: dict[str, int],
    ) -> MapEvent:
        cfg = self.config

        t0 = time.perf_counter_ns()
        candidates: list[int] = []
        if self.locations:
            if self.mode is MapMode.ORACLE_LOCATIONS:
                candidates = self._oracle_candidates(frame)
            else:
                candidates = self._filter_candidates(
                    normalized_location_similarities(self.location_distances(values))
                )
        stage_ns["search"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        cand_images: list[int] = []
        scores: np.ndarray | None = None
        for lid in candidates:
            cand_images.extend(self.locations[lid].image_ids)
        if cand_images:
            scores = lf.batch_match_counts(
                features, [self._features[img] for img in cand_images], cfg.match_ratio
            ).astype(np.float64)
        stage_ns["likelihood"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        if self.beliefs.size:
            evolved = (
                bf.legacy_predict_array(self.beliefs, self.kernel)
                if self.legacy_evolution
                else bf.predict_array(self.beliefs, self.kernel)
            )
            self.beliefs = (
                bf.legacy_add_pose_array(evolved)
                if self.legacy_evolution
                else bf.add_pose_array(evolved)
            )
        else:
            self.beliefs = np.array([1.0])
        if cand_images:
            likelihood = np.full(self.beliefs.size, lf.LIKELIHOOD_FLOOR)
            likelihood[cand_images] += scores
            self.beliefs = bf.measurement_update_array(self.beliefs, likelihood)
        stage_ns["belief"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        best_image = -1
        inliers = -1
        if cand_images:
            cand_arr = np.asarray(cand_images)
            best_image = int(cand_arr[int(np.argmax(self.beliefs[cand_arr]))])
            inliers = lf.verify_match(
                features,
                self._features[best_image],
                cfg.match_ratio,
                cfg.verify_threshold_px,
                cfg.verify_iterations,
                self.seed,
            )
        stage_ns["verify"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        event = self._decide(frame, values, candidates, best_image, inliers)
        stage_ns["update"] = time.perf_counter_ns() - t0
        event.stage_ns = stage_ns
        return event

    def _process_flat(
        self,
        frame: int,
        values: np.ndarray,
        features: lf.FeatureSet,
        stage_ns: dict[str, int],
    ) -> MapEvent:
        cfg = self.config

        t0 = time.perf_counter_ns()
        best_image = -1
        if self.frame_count:
            dists = distances_to_rows(values, self._image_rows.view, self.metric)
            # mirror the hierarchical eligibility: skip the active location
            # and any location whose newest image is inside the temporal mask
            loc_ok = (frame - self._newest_frames) > cfg.temporal_mask
            if 0 <= self.active_id < loc_ok.size:
                loc_ok[self.active_id] = False
            eligible = loc_ok[self._loc_of_image_buf[: self.frame_count]]
            if np.any(eligible):
                masked = np.where(eligible, dists, np.inf)
                best_image = int(np.argmin(masked))
        stage_ns["search"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        inliers = -1
        if best_image >= 0:
            inliers = lf.verify_match(
                features,
                self._features[best_image],
                cfg.match_ratio,
                cfg.verify_threshold_px,
                cfg.verify_iterations,
                self.seed,
            )
        stage_ns["verify"] = time.perf_counter_ns() - t0

        t0 = time.perf_counter_ns()
        candidates = (
            [int(self._loc_of_image_buf[best_image])] if best_image >= 0 else []
        )
        event = self._decide(frame, values, candidates, best_image, inliers)
        stage_ns["update"] = time.perf_counter_ns() - t0
        event.stage_ns = stage_ns
        return event

    def _decide(
        self,
        frame: int,
        values: np.ndarray,
        candidates: list[int],
        best_image: int,
        inliers: int,
    ) -> MapEvent:
        if best_image >= 0 and inliers >= self.config.t_inliers:
            loc = self.locations[int(self._loc_of_image_buf[best_image])]
            self._assign(frame, loc, values)
            self.active_id = loc.id
            return MapEvent(
                frame,
                EventKind.LOOP_CLOSURE,
                loc.id,
                image_id=best_image,
                inliers=inliers,
                candidates=candidates,
            )
        if self.active_id >= 0 and self.should_aggregate(values):
            loc = self.locations[self.active_id]
            self._assign(frame, loc, values)
            return MapEvent(
                frame,
                EventKind.AGGREGATED,
                loc.id,
                inliers=inliers,
                candidates=candidates,
            )
        loc = self._create_location(frame, values)
        self.active_id = loc.id
        return MapEvent(
            frame,
            EventKind.NEW_LOCATION,
            loc.id,
            inliers=inliers,
            candidates=candidates,
        )

    # -- export -------------------------------------------------------------

    def export_map(self) -> dict:
        return {
            "n_frames": self.frame_count,
            "n_locations": len(self.locations),
            "active_location": self.active_id,
            "locations": [
                {"id": loc.id, "size": len(loc.image_ids), "image_ids": list(loc.image_ids)}
                for loc in self.locations
            ],
        }
