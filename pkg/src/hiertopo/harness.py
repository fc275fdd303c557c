"""Experiment harness: replay descriptor sequences through the map engine,
sweep the aggregation threshold, benchmark descriptor computation, and
export distance matrices.

Every run writes a one-row report CSV, an events CSV, and a
locations.jsonl map summary into its output directory; files are written
atomically (temp + rename).
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import phog as phog_mod
from .descriptors import DescriptorSet, read_descriptor_set, write_descriptor_set
from .errors import ConfigError, DataError, DomainError
from .features import FeatureSet, read_feature_sets, write_feature_sets
from .mapping import (
    STAGES,
    EventKind,
    HierarchicalMap,
    MapConfig,
    MapEvent,
    MapMode,
)
from .metrics import (
    ExperimentReport,
    GroundTruth,
    continuity_ratio,
    count_fplc,
    distinctiveness_score,
    evaluate_predictions,
    read_ground_truth,
    timing_report,
    write_ground_truth,
)
from .synthetic import World, WorldSpec, generate_world

EVENT_COLUMNS = [
    "frame",
    "kind",
    "loc",
    "img",
    "inliers",
    "n_candidates",
    "candidates",
    "t_search",
    "t_likelihood",
    "t_belief",
    "t_verify",
    "t_update",
]

REPORT_COLUMNS = [
    "t_nn",
    "t_llc",
    "t_inliers",
    "temporal_mask",
    "margin_m",
    "t_ci",
    "mode",
    "seed",
    "n_frames",
    "n_locations",
    "n_closures",
    "true_positives",
    "false_positives",
    "precision",
    "recall",
    "fplc",
    "continuity_ratio",
    "distinctiveness",
    "total_runtime",
    "t_desc",
    "t_search",
    "t_likelihood",
    "t_belief",
    "t_verify",
    "t_update",
]

TIMING_COLUMNS = {
    "total_runtime",
    "t_desc",
    "t_search",
    "t_likelihood",
    "t_belief",
    "t_verify",
    "t_update",
}


@dataclass(frozen=True)
class RunConfig:
    descriptors: str
    features: str
    gt: str
    out: str
    map: MapConfig
    mode: str = "normal"
    seed: int = 0
    legacy_evolution: bool = False
    dump_beliefs: bool = False

    def __post_init__(self):
        MapMode.parse(self.mode)


@dataclass
class RunResult:
    report: ExperimentReport
    events: list[MapEvent]
    engine: HierarchicalMap
    desc_seconds: float = 0.0


def replay(
    dset: DescriptorSet,
    feature_sets: list[FeatureSet],
    gt: GroundTruth | None,
    map_config: MapConfig,
    mode: MapMode = MapMode.NORMAL,
    seed: int = 0,
    legacy_evolution: bool = False,
    belief_sink=None,
) -> RunResult:
    """Drive every frame through a fresh engine and score the event log."""
    if len(dset) != len(feature_sets):
        raise DataError(
            f"descriptor count {len(dset)} != feature-set count {len(feature_sets)}"
        )
    if gt is None:
        gt = GroundTruth({}, margin_m=map_config.margin_m)
    engine = HierarchicalMap(
        map_config,
        dim=dset.dim,
        metric=dset.metric,
        mode=mode,
        seed=seed,
        legacy_evolution=legacy_evolution,
        ground_truth=gt.positives if mode is MapMode.ORACLE_LOCATIONS else None,
    )
    values = dset.values.astype(np.float64)
    t_start = time.perf_counter()
    for frame in range(len(dset)):
        engine.process_image(values[frame], feature_sets[frame])
        if belief_sink is not None:
            belief_sink(frame, engine.beliefs)
    wall = time.perf_counter() - t_start

    events = engine.events
    if gt.positives:
        precision, recall, tp, fp = evaluate_predictions(events, gt, n_frames=len(dset))
    else:
        # no ground-truth queries: recall is undefined, closures are unscored
        tp, fp = [], [e for e in events if e.kind is EventKind.LOOP_CLOSURE]
        precision, recall = (0.0 if fp else 1.0), float("nan")
    fplc = count_fplc(events, gt, engine.membership())
    sizes = engine.location_sizes()
    timings = timing_report(events)
    report = ExperimentReport(
        t_nn=map_config.t_nn,
        recall=recall,
        precision=precision,
        n_locations=len(engine.locations),
        fplc=fplc,
        continuity_ratio=continuity_ratio(sizes, map_config.t_ci) if sizes else 0.0,
        distinctiveness=distinctiveness_score(fplc),
        total_runtime=wall,
        per_stage=timings["per_stage_s"],
        n_frames=len(dset),
        n_closures=sum(1 for e in events if e.kind is EventKind.LOOP_CLOSURE),
        true_positives=len(tp),
        false_positives=len(fp),
        mode=mode.value,
        seed=seed,
    )
    return RunResult(report=report, events=events, engine=engine)


def run(config: RunConfig) -> RunResult:
    """File-driven experiment: load inputs, replay, write artifacts."""
    for label, path in (("descriptors", config.descriptors),
                        ("features", config.features), ("gt", config.gt)):
        if not os.path.exists(path):
            raise ConfigError(f"{label} file not found: {path}")
    t0 = time.perf_counter()
    dset = read_descriptor_set(config.descriptors)
    feature_sets = read_feature_sets(config.features)
    desc_seconds = time.perf_counter() - t0
    gt = read_ground_truth(config.gt, margin_m=config.map.margin_m)

    os.makedirs(config.out, exist_ok=True)
    belief_rows: list[str] = []
    sink = None
    if config.dump_beliefs:
        def sink(frame: int, beliefs: np.ndarray) -> None:
            belief_rows.append(
                f"{frame}," + ",".join(repr(float(b)) for b in beliefs)
            )

    result = replay(
        dset,
        feature_sets,
        gt,
        config.map,
        mode=MapMode.parse(config.mode),
        seed=config.seed,
        legacy_evolution=config.legacy_evolution,
        belief_sink=sink,
    )
    result.desc_seconds = desc_seconds

    write_events_csv(result.events, os.path.join(config.out, "events.csv"))
    write_map_summary(result.engine, os.path.join(config.out, "locations.jsonl"))
    write_report_csv([report_row(result, config.map)],
                     os.path.join(config.out, "report.csv"))
    if config.dump_beliefs:
        _atomic_write(os.path.join(config.out, "beliefs.csv"),
                      "\n".join(belief_rows) + "\n")
    _write_location_histogram(result.engine, os.path.join(config.out, "location_sizes.svg"))
    return result


def report_row(result: RunResult, map_config: MapConfig) -> dict:
    rep = result.report
    row = {
        "t_nn": map_config.t_nn,
        "t_llc": map_config.t_llc,
        "t_inliers": map_config.t_inliers,
        "temporal_mask": map_config.temporal_mask,
        "margin_m": map_config.margin_m,
        "t_ci": map_config.t_ci,
        "mode": rep.mode,
        "seed": rep.seed,
        "n_frames": rep.n_frames,
        "n_locations": rep.n_locations,
        "n_closures": rep.n_closures,
        "true_positives": rep.true_positives,
        "false_positives": rep.false_positives,
        "precision": rep.precision,
        "recall": rep.recall,
        "fplc": rep.fplc,
        "continuity_ratio": rep.continuity_ratio,
        "distinctiveness": rep.distinctiveness,
        "total_runtime": rep.total_runtime,
        "t_desc": result.desc_seconds,
    }
    for stage in STAGES:
        row[f"t_{stage}"] = rep.per_stage.get(stage, 0.0)
    return row


# -- artifact writers ----------------------------------------------------------


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_events_csv(events: list[MapEvent], path: str) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(EVENT_COLUMNS)
    for ev in events:
        writer.writerow(
            [
                ev.frame,
                ev.kind.value,
                ev.location_id,
                ev.image_id,
                ev.inliers,
                len(ev.candidates),
                "|".join(str(c) for c in ev.candidates),
                *(repr(ev.stage_ns.get(stage, 0) / 1e9) for stage in STAGES),
            ]
        )
    _atomic_write(path, buf.getvalue())


def read_events_csv(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_map_summary(engine: HierarchicalMap, path: str) -> None:
    summary = engine.export_map()
    lines = [json.dumps({"n_frames": summary["n_frames"],
                         "n_locations": summary["n_locations"],
                         "active_location": summary["active_location"]},
                        sort_keys=True)]
    for loc in summary["locations"]:
        lines.append(json.dumps(loc, sort_keys=True))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_map_summary(path: str) -> dict:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    head, locations = lines[0], lines[1:]
    head["locations"] = locations
    return head


def write_report_csv(rows: list[dict], path: str) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    _atomic_write(path, buf.getvalue())


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _write_location_histogram(engine: HierarchicalMap, path: str) -> None:
    sizes = engine.location_sizes()
    if not sizes:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(sizes, bins=min(30, max(sizes)), color="#4878cf", edgecolor="black")
    ax.set_xlabel("images per location")
    ax.set_ylabel("locations")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


# -- t_nn sweep ----------------------------------------------------------------


def _sweep_point(args: tuple) -> dict:
    config_dict, t_nn = args
    try:
        map_cfg = MapConfig(**{**config_dict["map"], "t_nn": t_nn})
        cfg = RunConfig(
            descriptors=config_dict["descriptors"],
            features=config_dict["features"],
            gt=config_dict["gt"],
            out=os.path.join(config_dict["out"], f"tnn_{t_nn:g}"),
            map=map_cfg,
            mode=config_dict["mode"],
            seed=config_dict["seed"],
            legacy_evolution=config_dict["legacy_evolution"],
        )
        result = run(cfg)
        row = report_row(result, map_cfg)
        row["status"] = "ok"
        row["error"] = ""
        return row
    except Exception as exc:  # per-point failures recorded, sweep continues
        return {
            "t_nn": t_nn,
            "status": "error",
            "error": f"{type(exc).__name__}: {exc}",
        }


def sweep(config: RunConfig, t_nn_values: list[float], workers: int | None = None) -> list[dict]:
    """One independent run per aggregation-threshold value."""
    if len(t_nn_values) < 2:
        raise ConfigError("sweep needs at least two t_nn values")
    os.makedirs(config.out, exist_ok=True)
    config_dict = {
        "descriptors": config.descriptors,
        "features": config.features,
        "gt": config.gt,
        "out": config.out,
        "map": asdict(config.map),
        "mode": config.mode,
        "seed": config.seed,
        "legacy_evolution": config.legacy_evolution,
    }
    jobs = [(config_dict, t) for t in t_nn_values]
    max_workers = workers or os.cpu_count() or 1
    if max_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(job) for job in jobs]

    buf = io.StringIO()
    writer = csv.DictWriter(
        buf, fieldnames=REPORT_COLUMNS + ["status", "error"], extrasaction="ignore"
    )
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    _atomic_write(os.path.join(config.out, "sweep.csv"), buf.getvalue())
    _write_sweep_plots(rows, config.out)
    return rows


def _write_sweep_plots(rows: list[dict], out_dir: str) -> None:
    ok = [r for r in rows if r.get("status") == "ok"]
    if len(ok) < 2:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    x = [r["n_locations"] for r in ok]
    panels = (
        ("recall", "recall at reported precision", "recall_vs_locations.svg"),
        ("total_runtime", "total runtime (s)", "runtime_vs_locations.svg"),
        ("fplc", "false positive location candidates", "fplc_vs_locations.svg"),
    )
    for key, label, name in panels:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        order = np.argsort(x)
        ax.plot(np.asarray(x)[order], np.asarray([r[key] for r in ok])[order], "o-")
        ax.set_xlabel("locations in map")
        ax.set_ylabel(label)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, name), format="svg")
        plt.close(fig)


# -- descriptor benchmarking ---------------------------------------------------


def bench_descriptors(
    extractor: str,
    images: str | None = None,
    descriptors: str | None = None,
    warmups: int = 3,
    repeats: int = 10,
) -> list[dict]:
    """Per-image compute times; warm-up iterations are excluded."""
    if extractor == "phog":
        if not images or not os.path.isdir(images):
            raise ConfigError("phog benchmark needs --images pointing to a PGM directory")
        names = sorted(n for n in os.listdir(images) if n.lower().endswith(".pgm"))
        if not names:
            raise ConfigError(f"no .pgm images under {images}")
        grids = [phog_mod.read_pgm(os.path.join(images, n)) for n in names]

        def once_single() -> float:
            t0 = time.perf_counter()
            phog_mod.compute_phog(grids[0])
            return time.perf_counter() - t0

        def once_batch() -> float:
            t0 = time.perf_counter()
            for g in grids:
                phog_mod.compute_phog(g)
            return (time.perf_counter() - t0) / len(grids)

        return [
            _bench_row("phog", 1, once_single, warmups, repeats),
            _bench_row("phog", len(grids), once_batch, warmups, repeats),
        ]
    if extractor in ("gdsc", "gdsc-loader"):
        if not descriptors or not os.path.exists(descriptors):
            raise ConfigError("loader benchmark needs --descriptors pointing to a GDSC file")
        n = len(read_descriptor_set(descriptors))

        def once_load() -> float:
            t0 = time.perf_counter()
            read_descriptor_set(descriptors)
            return (time.perf_counter() - t0) / n

        return [_bench_row("gdsc-loader", n, once_load, warmups, repeats)]
    raise ConfigError(f"unknown extractor {extractor!r}")


def _bench_row(name: str, batch: int, once, warmups: int, repeats: int) -> dict:
    for _ in range(warmups):
        once()
    samples = np.array([once() for _ in range(repeats)])
    mean = float(samples.mean())
    std = float(samples.std())
    return {
        "extractor": name,
        "batch_size": batch,
        "per_image_s": mean,
        "std_s": std,
        "cov": std / mean if mean > 0 else 0.0,
        "repeats": repeats,
    }


# -- distance matrix export ----------------------------------------------------


def export_distance_matrix(
    dset: DescriptorSet,
    out_prefix: str,
    force: bool = False,
    max_n: int = 5000,
) -> dict:
    """N x N float32 distance matrix (row-major) plus an SVG heatmap."""
    n = len(dset)
    if n > max_n and not force:
        raise DomainError(
            f"{n} descriptors would need {n * n * 4 / 1e9:.2f} GB; "
            f"pass force to exceed the {max_n} budget"
        )
    values = dset.values.astype(np.float64)
    matrix = np.zeros((n, n), dtype=np.float32)
    from .descriptors import distances_to_rows

    for i in range(n):
        matrix[i] = distances_to_rows(values[i], values, dset.metric)

    matrix_path = f"{out_prefix}.f32"
    tmp = f"{matrix_path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
    os.replace(tmp, matrix_path)

    svg_path = f"{out_prefix}.svg"
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.imshow(matrix, cmap="gray", interpolation="nearest")
    ax.set_xlabel("frame")
    ax.set_ylabel("frame")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)
    return {"n": n, "matrix": matrix_path, "heatmap": svg_path}


# -- synthetic world files -----------------------------------------------------


def write_world(world: World, out_dir: str) -> dict:
    """Serialize a synthetic world through the standard ingestion formats."""
    os.makedirs(out_dir, exist_ok=True)
    desc_path = os.path.join(out_dir, "descriptors.gdsc")
    feat_path = os.path.join(out_dir, "features.lfea")
    gt_path = os.path.join(out_dir, "gt_loops.txt")
    write_descriptor_set(world.descriptors, desc_path)
    write_feature_sets(world.feature_sets, feat_path)
    write_ground_truth(world.positives, gt_path)
    regions_path = os.path.join(out_dir, "regions.csv")
    _atomic_write(
        regions_path,
        "frame,region\n"
        + "\n".join(f"{i},{r}" for i, r in enumerate(world.region_of_frame))
        + "\n",
    )
    return {
        "descriptors": desc_path,
        "features": feat_path,
        "gt": gt_path,
        "regions": regions_path,
        "n_frames": world.n_frames,
        "n_gt_queries": len(world.positives),
    }


# -- knob characterization -------------------------------------------------------


def characterize_knobs(
    jump_probs: list[float],
    separations: list[float],
    map_config: MapConfig,
    seeds: list[int] = (0,),
    n_frames: int = 400,
    dim: int = 16,
    spread: float = 4.0,
    step_sigma: float = 0.15,
) -> dict:
    """Full-pipeline response of the continuity and distinctiveness knobs.

    The teleport probability controls continuity (measured by the small-
    location ratio); region separation controls distinctiveness (measured
    by false positive location candidates on a two-region revisit route).
    """
    from .synthetic import simplex_centers

    if len(jump_probs) + len(separations) == 0:
        raise ConfigError("nothing to characterize")
    continuity_rows = []
    for jump_prob in jump_probs:
        for seed in seeds:
            spec = WorldSpec(
                n_frames=n_frames,
                dim=dim,
                regions=[(np.zeros(dim), spread)],
                route=[(0, n_frames)],
                step_sigma=step_sigma,
                jump_prob=jump_prob,
                seed=seed,
            )
            world = generate_world(spec)
            result = replay(world.descriptors, world.feature_sets, None, map_config)
            continuity_rows.append(
                {
                    "jump_prob": jump_prob,
                    "seed": seed,
                    "n_locations": result.report.n_locations,
                    "continuity_ratio": result.report.continuity_ratio,
                }
            )

    distinctiveness_rows = []
    for separation in separations:
        for seed in seeds:
            centers = simplex_centers(2, dim, separation)
            third = n_frames // 3
            spec = WorldSpec(
                n_frames=n_frames,
                dim=dim,
                regions=[(centers[0], spread), (centers[1], spread)],
                route=[(0, third), (1, third), (0, n_frames - 2 * third)],
                step_sigma=step_sigma,
                noise_sigma=step_sigma / 10.0,
                seed=seed,
            )
            world = generate_world(spec)
            gt = GroundTruth(world.positives, map_config.margin_m)
            result = replay(world.descriptors, world.feature_sets, gt, map_config)
            distinctiveness_rows.append(
                {
                    "separation": separation,
                    "seed": seed,
                    "n_locations": result.report.n_locations,
                    "fplc": result.report.fplc,
                }
            )
    return {"continuity": continuity_rows, "distinctiveness": distinctiveness_rows}


# -- config files ----------------------------------------------------------------


def parse_config_file(path: str) -> dict[str, str]:
    """Line-based ``key = value`` format mirroring the CLI flags."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = body.partition("=")
            values[key.strip().lower().replace("-", "_")] = value.strip()
    return values
