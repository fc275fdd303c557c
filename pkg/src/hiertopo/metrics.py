"""Evaluation: precision/recall under a frame margin, false-positive
location candidates, continuity and distinctiveness scores, and timing
aggregation over event logs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DomainError, FormatError
from .mapping import EventKind, MapEvent, STAGES


@dataclass
class GroundTruth:
    """Query frame -> set of true match frames, with the margin used to
    count a prediction as a true positive."""

    positives: dict[int, set[int]]
    margin_m: int = 10

    def __post_init__(self):
        if any(not v for v in self.positives.values()):
            raise DomainError("a query must not map to an empty positive set")

    @property
    def n_queries(self) -> int:
        return len(self.positives)


@dataclass
class ExperimentReport:
    t_nn: float
    recall: float
    precision: float
    n_locations: int
    fplc: int
    continuity_ratio: float
    distinctiveness: float
    total_runtime: float
    per_stage: dict[str, float] = field(default_factory=dict)
    n_frames: int = 0
    n_closures: int = 0
    true_positives: int = 0
    false_positives: int = 0
    mode: str = "normal"
    seed: int = 0


def evaluate_predictions(
    events: list[MapEvent], gt: GroundTruth, n_frames: int | None = None
) -> tuple[float, float, list[MapEvent], list[MapEvent]]:
    """Classify loop-closure events as true/false positives.

    A prediction (q -> r) is a true positive iff q has ground truth and
    some r* in positives(q) satisfies |r - r*| <= margin. Recall counts
    ground-truth queries with at least one true positive.
    """
    if not gt.positives:
        raise DataError("ground truth has no positive queries")
    if n_frames is not None:
        for q, refs in gt.positives.items():
            if not 0 <= q < n_frames or any(not 0 <= r < n_frames for r in refs):
                raise DataError(f"ground-truth frame out of range for query {q}")
    m = gt.margin_m
    tp: list[MapEvent] = []
    fp: list[MapEvent] = []
    hit_queries: set[int] = set()
    for ev in events:
        if ev.kind is not EventKind.LOOP_CLOSURE:
            continue
        refs = gt.positives.get(ev.frame)
        if refs and any(abs(ev.image_id - r) <= m for r in refs):
            tp.append(ev)
            hit_queries.add(ev.frame)
        else:
            fp.append(ev)
    n_pred = len(tp) + len(fp)
    precision = len(tp) / n_pred if n_pred else 1.0
    recall = len(hit_queries) / len(gt.positives)
    return precision, recall, tp, fp


def count_fplc(
    events: list[MapEvent], gt: GroundTruth, membership: dict[int, list[int]]
) -> int:
    """False positive location candidates over all frames.

    A proposed location is a false positive for query q when it holds no
    image within the margin of any true match of q; queries without ground
    truth count every proposal.
    """
    m = gt.margin_m
    image_arrays = {lid: np.asarray(ids) for lid, ids in membership.items()}
    total = 0
    for ev in events:
        if not ev.candidates:
            continue
        refs = gt.positives.get(ev.frame)
        if not refs:
            total += len(ev.candidates)
            continue
        ref_arr = np.asarray(sorted(refs))
        for lid in ev.candidates:
            ids = image_arrays.get(lid)
            if ids is None or ids.size == 0:
                total += 1
                continue
            near = np.min(np.abs(ids[:, None] - ref_arr[None, :]))
            if near > m:
                total += 1
    return total


def continuity_ratio(location_sizes: list[int], t_ci: int) -> float:
    """Share of locations holding fewer than t_ci images (lower = smoother)."""
    if not location_sizes:
        raise DomainError("need at least one location")
    if t_ci < 1:
        raise DomainError("t_ci must be >= 1")
    small = sum(1 for s in location_sizes if s < t_ci)
    return small / len(location_sizes)


def distinctiveness_score(fplc: int) -> float:
    """1 / (1 + fplc): 1 with no false candidates, decreasing in fplc."""
    if fplc < 0:
        raise DomainError("fplc must be >= 0")
    return 1.0 / (1.0 + fplc)


def timing_report(events: list[MapEvent]) -> dict:
    """Per-stage totals plus per-frame mean and max, in seconds."""
    totals = dict.fromkeys(STAGES, 0)
    frame_totals = []
    for ev in events:
        for stage, ns in ev.stage_ns.items():
            totals[stage] = totals.get(stage, 0) + ns
        frame_totals.append(ev.total_ns)
    n = len(events)
    frame_arr = np.asarray(frame_totals, dtype=np.float64) / 1e9 if n else np.zeros(0)
    return {
        "per_stage_s": {k: v / 1e9 for k, v in totals.items()},
        "total_s": sum(totals.values()) / 1e9,
        "per_frame_mean_s": float(frame_arr.mean()) if n else 0.0,
        "per_frame_max_s": float(frame_arr.max()) if n else 0.0,
        "n_events": n,
    }


# -- ground-truth file format -------------------------------------------------


def write_ground_truth(positives: dict[int, set[int]], path: str | os.PathLike) -> None:
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "w") as fh:
        fh.write("# query_frame match_frame\n")
        for q in sorted(positives):
            for r in sorted(positives[q]):
                fh.write(f"{q} {r}\n")
    os.replace(tmp, path)


def read_ground_truth(path: str | os.PathLike, margin_m: int = 10) -> GroundTruth:
    positives: dict[int, set[int]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise FormatError(f"{os.fspath(path)}:{lineno}: expected 'q r'")
            try:
                q, r = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(
                    f"{os.fspath(path)}:{lineno}: non-integer frame index"
                ) from None
            if q < 0 or r < 0:
                raise DataError(f"{os.fspath(path)}:{lineno}: negative frame index")
            positives.setdefault(q, set()).add(r)
    return GroundTruth(positives=positives, margin_m=margin_m)
