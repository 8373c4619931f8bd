"""Manifest-driven benchmark runs with inside-/outside-inpainting splits.

A manifest is a JSON file:

    {"name": "toy-bench",
     "items": [{"image_path": "...", "mask_path": "...",
                "caption": "...", "split": "inside"}, ...]}

Paths are resolved relative to the manifest's directory and must exist at
load time. Each item is inpainted (mask = region to generate), fidelity
is measured against the original over the unmasked region, alignment
against the caption. Per-item failures are recorded, counted and left out
of the means. Reports are emitted as CSV (fixed columns) and JSON.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .branch import InjectionConfig, inpaint_sample
from .diffusion import SamplerConfig
from .errors import MaskEditError, NotFoundError, ValidationError
from .masks import BlurSpec, blur_mask, paste_blend
from .metrics import EmbeddingBackend, compute_fidelity, text_alignment

SPLITS = ("inside", "outside")
REPORT_COLUMNS = ["benchmark", "split", "psnr", "mse", "ssim", "lpips",
                  "clip_sim", "n"]


@dataclass(frozen=True)
class BenchmarkItem:
    image_path: Path
    mask_path: Path
    caption: str
    split: str


@dataclass(frozen=True)
class BenchmarkManifest:
    name: str
    items: tuple[BenchmarkItem, ...]

    @staticmethod
    def load(path) -> "BenchmarkManifest":
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"manifest not found: {path}")
        with open(path) as fh:
            raw = json.load(fh)
        base = path.parent
        items = []
        for entry in raw.get("items", []):
            split = entry.get("split")
            if split not in SPLITS:
                raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
            image_path = (base / entry["image_path"]).resolve()
            mask_path = (base / entry["mask_path"]).resolve()
            for p in (image_path, mask_path):
                if not p.exists():
                    raise NotFoundError(f"manifest references missing file: {p}")
            items.append(BenchmarkItem(image_path, mask_path,
                                       entry["caption"], split))
        if not items:
            raise ValidationError(f"manifest {path} has no items")
        return BenchmarkManifest(raw.get("name", path.stem), tuple(items))


def import_directory(root, name: str | None = None) -> dict:
    """Build a manifest dict from an images/ + masks/ + captions.json
    layout (the external benchmark formats are converted to this shape)."""
    root = Path(root)
    captions_path = root / "captions.json"
    if not captions_path.exists():
        raise NotFoundError(f"captions.json not found under {root}")
    with open(captions_path) as fh:
        captions = json.load(fh)
    items = []
    for image_path in sorted((root / "images").glob("*.png")):
        stem = image_path.stem
        mask_path = root / "masks" / f"{stem}.png"
        if not mask_path.exists():
            raise NotFoundError(f"mask missing for {stem}: {mask_path}")
        meta = captions.get(stem)
        if meta is None:
            raise ValidationError(f"no caption entry for {stem}")
        items.append({
            "image_path": str(image_path.relative_to(root)),
            "mask_path": str(mask_path.relative_to(root)),
            "caption": meta["caption"],
            "split": meta.get("split", "inside"),
        })
    return {"name": name or root.name, "items": items}


def _run_item(item: BenchmarkItem, bundle, scfg: SamplerConfig,
              icfg: InjectionConfig, blur_radius: int,
              backend: EmbeddingBackend | None) -> dict:
    image = imageio.load_image(item.image_path)
    mask = imageio.load_mask(item.mask_path)
    if mask.shape != image.shape[1:]:
        raise ValidationError(
            f"mask {mask.shape} does not match image {image.shape[1:]} for {item.image_path.name}"
        )
    masked = image * (1.0 - mask[None])
    raw = inpaint_sample(bundle.base, bundle.branch, masked, mask,
                         item.caption, icfg, scfg, bundle.schedule,
                         bundle.codec, bundle.embedder)
    result = paste_blend(image, raw, blur_mask(mask, BlurSpec(blur_radius)))
    fid = compute_fidelity(result, image, region_mask=mask)
    align = text_alignment(result, item.caption, backend)
    return {"split": item.split, "psnr": fid.psnr, "mse": fid.mse,
            "ssim": fid.ssim, "lpips": None, "clip_sim": align,
            "image": item.image_path.name}


def run_benchmark(manifest: BenchmarkManifest, bundle, *,
                  scfg: SamplerConfig = SamplerConfig(steps=10),
                  icfg: InjectionConfig = InjectionConfig(),
                  blur_radius: int = 0,
                  backend: EmbeddingBackend | None = None,
                  jobs: int = 1) -> dict:
    """Per-item metrics plus per-split arithmetic means."""
    rows: list[dict] = []
    failures: list[dict] = []

    def run(item: BenchmarkItem):
        try:
            return _run_item(item, bundle, scfg, icfg, blur_radius, backend)
        except MaskEditError as exc:
            return {"failed": True, "image": item.image_path.name,
                    "split": item.split, "error": exc.to_api_error()}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, manifest.items))
    else:
        results = [run(item) for item in manifest.items]
    for res in results:
        (failures if res.get("failed") else rows).append(res)

    def aggregate(selected: list[dict], split: str) -> dict:
        def mean_of(key):
            vals = [r[key] for r in selected if r[key] is not None]
            return float(np.mean(vals)) if vals else None

        return {"benchmark": manifest.name, "split": split,
                "psnr": mean_of("psnr"), "mse": mean_of("mse"),
                "ssim": mean_of("ssim"), "lpips": mean_of("lpips"),
                "clip_sim": mean_of("clip_sim"), "n": len(selected)}

    summary = []
    for split in SPLITS:
        rows_split = [r for r in rows if r["split"] == split]
        if rows_split:
            summary.append(aggregate(rows_split, split))
    if rows:
        summary.append(aggregate(rows, "all"))
    return {"benchmark": manifest.name, "items": rows, "summary": summary,
            "failed": failures, "n_failed": len(failures)}


def write_report_csv(path, report: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in report["summary"]:
            writer.writerow({col: row.get(col) for col in REPORT_COLUMNS})


def write_report_json(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
