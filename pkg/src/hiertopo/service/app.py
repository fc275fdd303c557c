"""FastAPI service exposing the experiment harness and session-based
online mapping. The CLI is a thin client of these endpoints.

Error payloads carry a ``code`` of ``config`` (bad configuration) or
``data`` (malformed/inconsistent input files), which clients map to exit
codes 2 and 3.
"""

from __future__ import annotations

import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import harness
from ..descriptors import Metric, read_descriptor_set
from ..errors import ConfigError, DataError, DomainError, DimensionError, FormatError
from ..features import DESCRIPTOR_BYTES, FeatureSet
from ..mapping import HierarchicalMap, MapConfig, MapMode
from ..phog import PhogParams, extract_directory
from ..descriptors import write_descriptor_set
from ..synthetic import WorldSpec, chi_squared_variant, generate_world
from . import schemas

app = FastAPI(title="hiertopo", version="0.1.0")


@dataclass
class Session:
    engine: HierarchicalMap
    lock: threading.Lock = field(default_factory=threading.Lock)


SESSIONS: dict[str, Session] = {}


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, (ConfigError, DomainError, DimensionError)):
        return HTTPException(status_code=400, detail={"code": "config", "detail": str(exc)})
    if isinstance(exc, (DataError, FormatError, FileNotFoundError)):
        return HTTPException(status_code=400, detail={"code": "data", "detail": str(exc)})
    return HTTPException(status_code=500, detail={"code": "internal", "detail": str(exc)})


def _map_config(model: schemas.MapConfigModel) -> MapConfig:
    return MapConfig(**model.model_dump())


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "sessions": len(SESSIONS)}


@app.post("/experiments/run", response_model=schemas.RunResponse)
def experiments_run(req: schemas.RunRequest) -> schemas.RunResponse:
    cfg = harness.RunConfig(
        descriptors=req.descriptors,
        features=req.features,
        gt=req.gt,
        out=req.out,
        map=_map_config(req.map),
        mode=req.mode,
        seed=req.seed,
        legacy_evolution=req.legacy_evolution,
        dump_beliefs=req.dump_beliefs,
    )
    try:
        result = harness.run(cfg)
    except Exception as exc:
        raise _http_error(exc) from exc
    artifacts = [
        os.path.join(req.out, name)
        for name in ("report.csv", "events.csv", "locations.jsonl")
    ]
    if req.dump_beliefs:
        artifacts.append(os.path.join(req.out, "beliefs.csv"))
    rep = result.report
    return schemas.RunResponse(
        report=schemas.ReportModel(
            t_nn=rep.t_nn,
            recall=rep.recall,
            precision=rep.precision,
            n_locations=rep.n_locations,
            fplc=rep.fplc,
            continuity_ratio=rep.continuity_ratio,
            distinctiveness=rep.distinctiveness,
            total_runtime=rep.total_runtime,
            per_stage=rep.per_stage,
            n_frames=rep.n_frames,
            n_closures=rep.n_closures,
            true_positives=rep.true_positives,
            false_positives=rep.false_positives,
            mode=rep.mode,
            seed=rep.seed,
        ),
        out=req.out,
        artifacts=artifacts,
    )


@app.post("/experiments/sweep", response_model=schemas.SweepResponse)
def experiments_sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    cfg = harness.RunConfig(
        descriptors=req.descriptors,
        features=req.features,
        gt=req.gt,
        out=req.out,
        map=_map_config(req.map),
        mode=req.mode,
        seed=req.seed,
        legacy_evolution=req.legacy_evolution,
    )
    try:
        rows = harness.sweep(cfg, req.t_nn_values, workers=req.workers)
    except Exception as exc:
        raise _http_error(exc) from exc
    return schemas.SweepResponse(rows=rows, csv=os.path.join(req.out, "sweep.csv"))


@app.post("/bench", response_model=schemas.BenchResponse)
def bench(req: schemas.BenchRequest) -> schemas.BenchResponse:
    try:
        rows = harness.bench_descriptors(
            req.extractor,
            images=req.images,
            descriptors=req.descriptors,
            warmups=req.warmups,
            repeats=req.repeats,
        )
    except Exception as exc:
        raise _http_error(exc) from exc
    return schemas.BenchResponse(rows=rows)


@app.post("/distmat", response_model=schemas.DistmatResponse)
def distmat(req: schemas.DistmatRequest) -> schemas.DistmatResponse:
    try:
        dset = read_descriptor_set(req.descriptors)
        os.makedirs(os.path.dirname(req.out) or ".", exist_ok=True)
        info = harness.export_distance_matrix(
            dset, req.out, force=req.force, max_n=req.max_n
        )
    except Exception as exc:
        raise _http_error(exc) from exc
    return schemas.DistmatResponse(**info)


@app.post("/synth", response_model=schemas.SynthResponse)
def synth(req: schemas.SynthRequest) -> schemas.SynthResponse:
    try:
        spec = WorldSpec(
            n_frames=req.n_frames,
            dim=req.dim,
            regions=[(np.asarray(r.center, dtype=np.float64), r.spread) for r in req.regions],
            route=[tuple(pair) for pair in req.route],
            step_sigma=req.step_sigma,
            jump_prob=req.jump_prob,
            noise_sigma=req.noise_sigma,
            seed=req.seed,
            features_per_image=req.features_per_image,
        )
        world = generate_world(spec)
        info = harness.write_world(world, req.out)
        if req.chi_squared:
            from ..descriptors import write_descriptor_set as _w

            _w(
                chi_squared_variant(world.descriptors),
                os.path.join(req.out, "descriptors_chi2.gdsc"),
            )
    except Exception as exc:
        raise _http_error(exc) from exc
    return schemas.SynthResponse(**info)


@app.post("/extract/phog", response_model=schemas.PhogExtractResponse)
def extract_phog(req: schemas.PhogExtractRequest) -> schemas.PhogExtractResponse:
    try:
        params = PhogParams(bins=req.bins, levels=req.levels, angle_span=req.angle_span)
        dset = extract_directory(req.images, params)
        os.makedirs(os.path.dirname(req.out) or ".", exist_ok=True)
        write_descriptor_set(dset, req.out)
    except Exception as exc:
        raise _http_error(exc) from exc
    return schemas.PhogExtractResponse(out=req.out, n_images=len(dset), dim=dset.dim)


# -- online mapping sessions ---------------------------------------------------


@app.post("/sessions", response_model=schemas.SessionCreateResponse)
def create_session(req: schemas.SessionCreateRequest) -> schemas.SessionCreateResponse:
    try:
        engine = HierarchicalMap(
            _map_config(req.map),
            dim=req.dim,
            metric=Metric.parse(req.metric),
            mode=MapMode.parse(req.mode),
            seed=req.seed,
            legacy_evolution=req.legacy_evolution,
        )
    except Exception as exc:
        raise _http_error(exc) from exc
    session_id = uuid.uuid4().hex
    SESSIONS[session_id] = Session(engine=engine)
    return schemas.SessionCreateResponse(session_id=session_id)


def _get_session(session_id: str) -> Session:
    session = SESSIONS.get(session_id)
    if session is None:
        raise HTTPException(
            status_code=404, detail={"code": "config", "detail": "unknown session"}
        )
    return session


@app.post("/sessions/{session_id}/frames", response_model=schemas.EventModel)
def push_frame(session_id: str, req: schemas.FrameRequest) -> schemas.EventModel:
    session = _get_session(session_id)
    try:
        xy = np.array([[f.x, f.y] for f in req.features], dtype=np.float32).reshape(-1, 2)
        desc = np.zeros((len(req.features), DESCRIPTOR_BYTES), dtype=np.uint8)
        for i, f in enumerate(req.features):
            raw = bytes.fromhex(f.descriptor_hex)
            if len(raw) != DESCRIPTOR_BYTES:
                raise DataError(
                    f"feature descriptor must be {DESCRIPTOR_BYTES} bytes"
                )
            desc[i] = np.frombuffer(raw, dtype=np.uint8)
        with session.lock:
            features = FeatureSet(session.engine.frame_count, xy, desc)
            event = session.engine.process_image(
                np.asarray(req.descriptor, dtype=np.float64), features
            )
    except HTTPException:
        raise
    except Exception as exc:
        raise _http_error(exc) from exc
    return schemas.EventModel(
        frame=event.frame,
        kind=event.kind.value,
        location_id=event.location_id,
        image_id=event.image_id,
        inliers=event.inliers,
        candidates=event.candidates,
        stage_ns=event.stage_ns,
    )


@app.get("/sessions/{session_id}/summary", response_model=schemas.SessionSummaryResponse)
def session_summary(session_id: str) -> schemas.SessionSummaryResponse:
    session = _get_session(session_id)
    with session.lock:
        summary = session.engine.export_map()
    return schemas.SessionSummaryResponse(**summary)


@app.delete("/sessions/{session_id}")
def delete_session(session_id: str) -> dict:
    _get_session(session_id)
    del SESSIONS[session_id]
    return {"deleted": session_id}
