"""t-SNE scatter of a descriptor file colored by map location.

Reads the GDSC descriptors and the mapping engine's locations.jsonl
summary, embeds to 2-D, and writes a self-contained SVG: one dot per
image (location color), one square per location centroid sized by image
count.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .gdsc import read_gdsc

PALETTE = [
    "#4878cf", "#d65f5f", "#59a14f", "#b07aa1", "#e49444",
    "#76b7b2", "#edc948", "#9c755f", "#bab0ac", "#17becf",
    "#8c564b", "#e377c2", "#2ca02c", "#d62728", "#9467bd",
]


class TsneError(ValueError):
    pass


def read_map_summary(path: str | os.PathLike) -> dict:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines:
        raise TsneError("empty map summary")
    head = lines[0]
    head["locations"] = lines[1:]
    return head


def location_of_frames(summary: dict) -> np.ndarray:
    n = summary["n_frames"]
    owner = np.full(n, -1, dtype=np.int64)
    for loc in summary["locations"]:
        for img in loc["image_ids"]:
            owner[img] = loc["id"]
    if np.any(owner < 0):
        raise TsneError("map summary does not cover every frame")
    return owner


def embed_2d(values: np.ndarray, seed: int = 0) -> np.ndarray:
    from sklearn.manifold import TSNE

    n = values.shape[0]
    perplexity = max(2.0, min(30.0, (n - 1) / 3.0))
    tsne = TSNE(
        n_components=2,
        perplexity=perplexity,
        init="pca",
        random_state=seed,
    )
    return tsne.fit_transform(values.astype(np.float64))


def tsne_plot(
    descriptors_path: str | os.PathLike,
    summary_path: str | os.PathLike,
    out_svg: str | os.PathLike,
    seed: int = 0,
    size: int = 640,
) -> dict:
    values, _ = read_gdsc(descriptors_path)
    summary = read_map_summary(summary_path)
    if summary["n_frames"] != values.shape[0]:
        raise TsneError(
            f"descriptor count {values.shape[0]} != map frame count {summary['n_frames']}"
        )
    owner = location_of_frames(summary)
    points = embed_2d(values, seed=seed)
    svg = render_svg(points, owner, summary["locations"], size=size)
    tmp = f"{os.fspath(out_svg)}.tmp"
    with open(tmp, "w") as fh:
        fh.write(svg)
    os.replace(tmp, out_svg)
    return {
        "out": os.fspath(out_svg),
        "n_points": int(values.shape[0]),
        "n_locations": len(summary["locations"]),
    }


def render_svg(points: np.ndarray, owner: np.ndarray, locations: list[dict],
               size: int = 640, margin: float = 24.0) -> str:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    span = np.where(hi - lo < 1e-9, 1.0, hi - lo)
    scaled = margin + (points - lo) / span * (size - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for (x, y), loc_id in zip(scaled, owner):
        color = PALETTE[int(loc_id) % len(PALETTE)]
        parts.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="{color}" '
            f'fill-opacity="0.75"/>'
        )
    for loc in locations:
        members = np.asarray(loc["image_ids"])
        center = scaled[members].mean(axis=0)
        side = 6.0 + 2.0 * np.sqrt(len(members))
        color = PALETTE[int(loc["id"]) % len(PALETTE)]
        parts.append(
            f'<rect x="{center[0] - side / 2:.2f}" y="{center[1] - side / 2:.2f}" '
            f'width="{side:.2f}" height="{side:.2f}" fill="{color}" '
            f'stroke="black" stroke-width="1"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
