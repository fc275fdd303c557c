"""Pydantic request/response models for the mapping service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class MapConfigModel(BaseModel):
    t_nn: float = Field(gt=0)
    t_llc: float = Field(default=0.8, ge=0, le=1)
    t_inliers: int = Field(default=30, ge=0)
    temporal_mask: int = Field(default=20, ge=0)
    margin_m: int = Field(default=10, ge=0)
    t_ci: int = Field(default=6, ge=1)


class RunRequest(BaseModel):
    descriptors: str
    features: str
    gt: str
    out: str
    map: MapConfigModel
    mode: Literal["normal", "oracle-locations", "flat-brute-force"] = "normal"
    seed: int = 0
    legacy_evolution: bool = False
    dump_beliefs: bool = False


class ReportModel(BaseModel):
    t_nn: float
    recall: float
    precision: float
    n_locations: int
    fplc: int
    continuity_ratio: float
    distinctiveness: float
    total_runtime: float
    per_stage: dict[str, float]
    n_frames: int
    n_closures: int
    true_positives: int
    false_positives: int
    mode: str
    seed: int


class RunResponse(BaseModel):
    report: ReportModel
    out: str
    artifacts: list[str]


class SweepRequest(BaseModel):
    descriptors: str
    features: str
    gt: str
    out: str
    map: MapConfigModel
    t_nn_values: list[float] = Field(min_length=2)
    mode: Literal["normal", "oracle-locations", "flat-brute-force"] = "normal"
    seed: int = 0
    legacy_evolution: bool = False
    workers: Optional[int] = None


class SweepResponse(BaseModel):
    rows: list[dict]
    csv: str


class BenchRequest(BaseModel):
    extractor: Literal["phog", "gdsc", "gdsc-loader"]
    images: Optional[str] = None
    descriptors: Optional[str] = None
    warmups: int = Field(default=3, ge=0)
    repeats: int = Field(default=10, ge=1)


class BenchResponse(BaseModel):
    rows: list[dict]


class DistmatRequest(BaseModel):
    descriptors: str
    out: str
    force: bool = False
    max_n: int = 5000


class DistmatResponse(BaseModel):
    n: int
    matrix: str
    heatmap: str


class RegionModel(BaseModel):
    center: list[float]
    spread: float = Field(gt=0)


class SynthRequest(BaseModel):
    out: str
    n_frames: int = Field(gt=0)
    dim: int = Field(gt=0)
    regions: list[RegionModel]
    route: list[tuple[int, int]]
    step_sigma: float = Field(gt=0)
    jump_prob: float = Field(default=0.0, ge=0, le=1)
    noise_sigma: float = Field(default=0.0, ge=0)
    seed: int = 0
    features_per_image: int = Field(default=48, gt=0)
    chi_squared: bool = False


class SynthResponse(BaseModel):
    descriptors: str
    features: str
    gt: str
    regions: str
    n_frames: int
    n_gt_queries: int


class PhogExtractRequest(BaseModel):
    images: str
    out: str
    bins: int = Field(default=60, gt=0)
    levels: int = Field(default=2, ge=0)
    angle_span: Literal[180, 360] = 360


class PhogExtractResponse(BaseModel):
    out: str
    n_images: int
    dim: int


class SessionCreateRequest(BaseModel):
    dim: int = Field(gt=0)
    metric: Literal["chi_squared", "euclidean"] = "euclidean"
    map: MapConfigModel
    mode: Literal["normal", "flat-brute-force"] = "normal"
    seed: int = 0
    legacy_evolution: bool = False


class SessionCreateResponse(BaseModel):
    session_id: str


class FeatureModel(BaseModel):
    x: float
    y: float
    descriptor_hex: str  # 32 bytes, 64 hex chars


class FrameRequest(BaseModel):
    descriptor: list[float]
    features: list[FeatureModel] = Field(default_factory=list)


class EventModel(BaseModel):
    frame: int
    kind: str
    location_id: int
    image_id: int
    inliers: int
    candidates: list[int]
    stage_ns: dict[str, int]


class SessionSummaryResponse(BaseModel):
    n_frames: int
    n_locations: int
    active_location: int
    locations: list[dict]


class ErrorBody(BaseModel):
    code: Literal["config", "data", "internal"]
    detail: str
