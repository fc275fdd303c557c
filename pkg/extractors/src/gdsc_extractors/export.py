"""Batch descriptor export over an image directory.

Embedding models are pluggable: serialized TorchScript modules supplied
by the user (``torchscript:/path/model.pt``), or the weightless seeded
``random-projection`` baseline. Export is resumable: finished rows live
in a ``.part`` payload next to a progress sidecar, and the final GDSC
file only appears once every image is embedded.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .gdsc import HEADER, MAGIC, METRIC_EUCLIDEAN, VERSION

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm", ".tif", ".tiff")


class ExportError(RuntimeError):
    pass


@dataclass
class ExtractorSpec:
    model: str
    resize: tuple[int, int] = (224, 224)  # (height, width)
    dim: int = 128
    crop128: bool = False
    batch_size: int = 8
    device: str = "cpu"

    def __post_init__(self):
        if self.dim <= 0:
            raise ExportError("dim must be positive")
        if self.crop128 and self.dim < 128:
            raise ExportError("crop128 needs a source dim of at least 128")
        if self.batch_size < 1:
            raise ExportError("batch_size must be >= 1")

    @property
    def output_dim(self) -> int:
        return 128 if self.crop128 else self.dim

    def fingerprint(self) -> str:
        payload = json.dumps(
            [self.model, list(self.resize), self.dim, self.crop128],
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


class RandomProjectionEmbedder:
    """Seeded projection of resized grayscale pixels; no weights needed."""

    def __init__(self, spec: ExtractorSpec, seed: int = 1234):
        h, w = spec.resize
        rng = np.random.default_rng(seed)
        self._matrix = rng.standard_normal((h * w, spec.dim)).astype(np.float32)
        self._matrix /= np.sqrt(h * w)

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        flat = batch.mean(axis=3).reshape(batch.shape[0], -1)
        return flat @ self._matrix


class TorchScriptEmbedder:
    """Runs a serialized TorchScript module mapping (B,3,H,W) to (B,D)."""

    def __init__(self, spec: ExtractorSpec, path: str):
        import torch

        self._torch = torch
        if not os.path.exists(path):
            raise ExportError(f"model file not found: {path}")
        self._module = torch.jit.load(path, map_location=spec.device)
        self._module.eval()
        self._device = spec.device

    def __call__(self, batch: np.ndarray) -> np.ndarray:
        torch = self._torch
        tensor = torch.from_numpy(batch.transpose(0, 3, 1, 2).copy()).to(self._device)
        with torch.no_grad():
            out = self._module(tensor)
        return out.detach().cpu().numpy().astype(np.float32)


def build_embedder(spec: ExtractorSpec):
    if spec.model == "random-projection":
        return RandomProjectionEmbedder(spec)
    if spec.model.startswith("torchscript:"):
        return TorchScriptEmbedder(spec, spec.model.split(":", 1)[1])
    raise ExportError(
        f"unknown model {spec.model!r}; use 'random-projection' or 'torchscript:<path>'"
    )


def list_images(image_dir: str | os.PathLike) -> list[str]:
    names = sorted(
        name
        for name in os.listdir(image_dir)
        if name.lower().endswith(IMAGE_EXTENSIONS)
    )
    return [os.path.join(os.fspath(image_dir), name) for name in names]


def load_image(path: str, resize: tuple[int, int]) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((resize[1], resize[0]), Image.BILINEAR)
    except Exception as exc:
        raise ExportError(f"cannot read image {path}: {exc}") from exc
    return np.asarray(rgb, dtype=np.float32) / 255.0


def export_descriptors(
    spec: ExtractorSpec,
    image_dir: str | os.PathLike,
    out_path: str | os.PathLike,
    resume: bool = True,
) -> dict:
    """Embed every image (lexicographic order) and write one GDSC file.

    A crashed export leaves ``<out>.part`` plus ``<out>.progress.json``;
    rerunning with the same spec picks up after the last finished image.
    """
    paths = list_images(image_dir)
    if not paths:
        raise ExportError(f"no images under {os.fspath(image_dir)}")
    out_path = os.fspath(out_path)
    part_path = f"{out_path}.part"
    progress_path = f"{out_path}.progress.json"
    out_dim = spec.output_dim

    done = 0
    if resume and os.path.exists(progress_path) and os.path.exists(part_path):
        with open(progress_path) as fh:
            progress = json.load(fh)
        if (
            progress.get("fingerprint") == spec.fingerprint()
            and progress.get("n_images") == len(paths)
            and os.path.getsize(part_path) == progress.get("written", -1) * out_dim * 4
        ):
            done = int(progress["written"])
        else:
            os.remove(part_path)
    elif os.path.exists(part_path):
        os.remove(part_path)

    embedder = build_embedder(spec)
    mode = "ab" if done else "wb"
    with open(part_path, mode) as part:
        idx = done
        while idx < len(paths):
            chunk = paths[idx : idx + spec.batch_size]
            batch = np.stack([load_image(p, spec.resize) for p in chunk])
            rows = np.asarray(embedder(batch), dtype=np.float32)
            if rows.shape != (len(chunk), spec.dim):
                raise ExportError(
                    f"model produced shape {rows.shape}, expected ({len(chunk)}, {spec.dim})"
                )
            if spec.crop128:
                rows = rows[:, :128]
                norms = np.linalg.norm(rows, axis=1, keepdims=True)
                norms[norms == 0.0] = 1.0
                rows = rows / norms
            part.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
            part.flush()
            idx += len(chunk)
            with open(progress_path, "w") as fh:
                json.dump(
                    {
                        "fingerprint": spec.fingerprint(),
                        "n_images": len(paths),
                        "written": idx,
                    },
                    fh,
                )

    tmp = f"{out_path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, METRIC_EUCLIDEAN, 0, len(paths), out_dim))
        with open(part_path, "rb") as part:
            while True:
                block = part.read(1 << 20)
                if not block:
                    break
                fh.write(block)
    os.replace(tmp, out_path)
    os.remove(part_path)
    os.remove(progress_path)
    return {"out": out_path, "n_images": len(paths), "dim": out_dim}
