"""Image-quality metrics, the benchmark harness, and report emission."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import Rng, alpha_blend, to_uint8
from .data.factories import (
    InpaintCache,
    make_comp_pair,
    make_shape_sample,
    sample_occlusion_retrying,
)
from .data.manifest import load_all_instances
from .errors import ConfigurationError, DegenerateMaskError, DimensionError, SamplingFailureError
from .training import images_to_torch, masks_to_torch

SCHEMA_VERSION = 1
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
LUMA = np.array([0.299, 0.587, 0.114])
BIN_EDGES = ((0.05, 0.2), (0.2, 0.4), (0.4, 0.5))


def psnr(pred: np.ndarray, target: np.ndarray) -> float:
    """10*log10(1/MSE) for peak 1; +inf when the images are identical."""
    if pred.shape != target.shape:
        raise DimensionError("psnr: shape mismatch")
    mse = float(np.mean((pred.astype(np.float64) - target.astype(np.float64)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def _luma(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) @ LUMA


def _windowed_mean(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, kernel.shape)
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean local SSIM on the luma channel, 11x11 Gaussian window sigma=1.5."""
    if pred.shape != target.shape:
        raise DimensionError("ssim: shape mismatch")
    if min(pred.shape[0], pred.shape[1]) < SSIM_WINDOW:
        raise DimensionError(f"ssim: image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    x = _luma(pred)
    y = _luma(target)
    k = _gaussian_window()
    mu_x = _windowed_mean(x, k)
    mu_y = _windowed_mean(y, k)
    sxx = _windowed_mean(x * x, k) - mu_x**2
    syy = _windowed_mean(y * y, k) - mu_y**2
    sxy = _windowed_mean(x * y, k) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return float(np.mean(num / den))


def miou(pred: np.ndarray, target: np.ndarray) -> float:
    """Intersection over union of binary masks; two empty masks score 1."""
    if pred.shape != target.shape:
        raise DimensionError("miou: shape mismatch")
    p = pred > 0.5
    t = target > 0.5
    union = (p | t).sum()
    if union == 0:
        return 1.0
    return float((p & t).sum() / union)


def region_l1(pred: np.ndarray, target: np.ndarray, region: np.ndarray) -> float:
    """Mean absolute error over the region's pixels, on the 0-255 scale."""
    sel = region > 0.5
    if not sel.any():
        raise DegenerateMaskError("region_l1: empty region")
    diff = np.abs(pred.astype(np.float64) - target.astype(np.float64))
    return float(diff[sel].mean() * 255.0)


_METRIC_PLUGINS: dict = {}


def register_metric(name: str, fn) -> None:
    """Register an extra (pred, target) -> float metric (e.g. a perceptual one)."""
    if name in _METRIC_PLUGINS:
        raise ValueError(f"metric {name!r} already registered")
    _METRIC_PLUGINS[name] = fn


def unregister_metric(name: str) -> None:
    _METRIC_PLUGINS.pop(name, None)


def bin_label(ratio: float) -> str | None:
    for lo, hi in BIN_EDGES:
        if lo < ratio <= hi:
            return f"({lo},{hi}]"
    return None


@dataclass
class MetricRow:
    id: str
    l1: float | None
    psnr: float | None
    ssim: float | None
    miou: float | None
    area_ratio: float
    bin: str | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {
            "id": self.id,
            "l1": self.l1,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "miou": self.miou,
            "area_ratio": self.area_ratio,
            "bin": self.bin,
        }
        d.update(self.extras)
        return d


@dataclass
class MetricReport:
    task: str
    seed: int
    resolution: int
    rows: list[MetricRow]
    bins: dict
    aggregates: dict
    panels: list = field(default_factory=list)  # (input, gt, output) montage triplets

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task": self.task,
            "seed": self.seed,
            "resolution": self.resolution,
            "rows": [r.as_dict() for r in self.rows],
            "bins": self.bins,
            "aggregates": self.aggregates,
        }


def _mean_var(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "variance": None}
    arr = np.asarray(values, dtype=np.float64)
    if not np.isfinite(arr).all():
        return {"count": len(values), "mean": math.inf, "variance": math.nan}
    return {"count": len(values), "mean": float(arr.mean()), "variance": float(arr.var())}


def _aggregate(rows: list[MetricRow]) -> dict:
    out = {}
    for key in ("l1", "psnr", "ssim", "miou"):
        vals = [getattr(r, key) for r in rows if getattr(r, key) is not None]
        out[key] = _mean_var(vals)
    return out


def _bin_aggregates(rows: list[MetricRow]) -> dict:
    bins = {}
    for lo, hi in BIN_EDGES:
        label = f"({lo},{hi}]"
        bins[label] = _aggregate([r for r in rows if r.bin == label])
    return bins


def _encode(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if obj == "inf":
        return math.inf
    if obj == "-inf":
        return -math.inf
    if obj == "nan":
        return math.nan
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def save_report(report: MetricReport, path) -> None:
    Path(path).write_text(json.dumps(_encode(report.to_dict()), indent=1))


def load_report(path) -> MetricReport:
    payload = _decode(json.loads(Path(path).read_text()))
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(f"unsupported report schema {payload.get('schema_version')}")
    core_keys = {"id", "l1", "psnr", "ssim", "miou", "area_ratio", "bin"}
    rows = [
        MetricRow(
            id=r["id"],
            l1=r["l1"],
            psnr=r["psnr"],
            ssim=r["ssim"],
            miou=r["miou"],
            area_ratio=r["area_ratio"],
            bin=r["bin"],
            extras={k: v for k, v in r.items() if k not in core_keys},
        )
        for r in payload["rows"]
    ]
    return MetricReport(
        task=payload["task"],
        seed=payload["seed"],
        resolution=payload["resolution"],
        rows=rows,
        bins=payload["bins"],
        aggregates=payload["aggregates"],
    )


def completion_fn_from(net):
    def fn(sample):
        with torch.no_grad():
            _, refined = net(
                images_to_torch([sample.masked_object]),
                masks_to_torch([sample.m_vis]),
                masks_to_torch([sample.m_inv]),
            )
        mask = np.maximum(sample.m_vis, sample.m_inv)[..., None]
        return refined[0].permute(1, 2, 0).numpy().astype(np.float32) * mask

    return fn


def composition_fn_from(net):
    def fn(pair):
        with torch.no_grad():
            i_out, alpha = net(
                images_to_torch([pair.background]),
                images_to_torch([pair.edited_object]),
                masks_to_torch([pair.support_mask]),
            )
        return alpha_blend(
            i_out[0].permute(1, 2, 0).numpy().astype(np.float32),
            pair.background,
            alpha[0, 0].numpy().astype(np.float32),
        ).astype(np.float32)

    return fn


def shape_fn_from(net):
    def fn(sample):
        with torch.no_grad():
            pv, pa = net(images_to_torch([sample.image]), masks_to_torch([sample.m_edit]))
        return pv[0, 0].numpy(), pa[0, 0].numpy()

    return fn


def _mask_to_rgb(mask: np.ndarray) -> np.ndarray:
    return np.repeat(np.clip(mask, 0, 1)[..., None], 3, axis=2).astype(np.float32)


def _num_workers(explicit: int | None) -> int:
    if explicit is not None:
        return max(1, explicit)
    return max(1, int(os.environ.get("AMODAL_NUM_WORKERS", "1")))


def _bbox_crop(mask: np.ndarray, *images, min_size: int = SSIM_WINDOW):
    """Crop images to the mask bounding box, grown to at least min_size."""
    ys, xs = np.nonzero(mask > 0.5)
    h, w = mask.shape
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    while y1 - y0 < min_size:
        y0, y1 = max(0, y0 - 1), min(h, y1 + 1)
    while x1 - x0 < min_size:
        x0, x1 = max(0, x0 - 1), min(w, x1 + 1)
    return [img[y0:y1, x0:x1] for img in images]


def run_benchmark(
    manifest,
    task: str,
    model_fn,
    seed: int = 0,
    resolution: int = 64,
    limit: int | None = None,
    max_panels: int = 8,
    num_workers: int | None = None,
    metrics_region: str = "full",
) -> MetricReport:
    """Evaluate `model_fn` over factory-built samples with a fixed eval seed.

    model_fn signatures per task:
      completion:  OcclusionSample -> predicted object image
      composition: CompTrainingPair -> composite image
      shape:       ShapeSample -> (visible probs, amodal probs)

    `metrics_region` is "full" (PSNR/SSIM over the whole image) or "bbox"
    (over the object's bounding box).
    """
    if task not in ("completion", "composition", "shape"):
        raise ConfigurationError(f"unknown benchmark task {task!r}")
    if metrics_region not in ("full", "bbox"):
        raise ConfigurationError(f"unknown metrics_region {metrics_region!r}")
    instances = load_all_instances(manifest, resolution)
    if task in ("completion", "shape") and any(i.amodal_mask is None for i in instances):
        raise ConfigurationError(f"{task} benchmark requires amodal ground truth")
    if limit is not None:
        instances = instances[:limit]
    rng = Rng(seed).child("eval")
    hw = resolution * resolution
    cache = InpaintCache()
    donor_masks = [i.visible_mask for i in instances]

    def eval_one(i: int):
        inst = instances[i]
        sample_rng = rng.child(i)
        ratio = float(inst.visible_mask.sum()) / hw
        if task == "completion":
            try:
                sample = sample_occlusion_retrying(inst, donor_masks, sample_rng)
            except SamplingFailureError:
                return None
            pred = model_fn(sample)
            p, t = pred, sample.target
            if metrics_region == "bbox":
                p, t = _bbox_crop(inst.visible_mask, p, t)
            row = MetricRow(
                id=inst.id,
                l1=region_l1(pred, sample.target, inst.visible_mask),
                psnr=psnr(p, t),
                ssim=ssim(p, t),
                miou=None,
                area_ratio=ratio,
                bin=bin_label(ratio),
                extras={name: fn(pred, sample.target) for name, fn in _METRIC_PLUGINS.items()},
            )
            panel = (sample.masked_object, sample.target, pred)
        elif task == "composition":
            ref = instances[int(sample_rng.child("ref").integers(0, len(instances)))]
            pair = make_comp_pair(inst, ref, sample_rng, inpainter=cache.for_instance(inst))
            pred = model_fn(pair)
            naive = pair.edited_object + pair.background * (1.0 - pair.support_mask[..., None])
            p, t = pred, pair.target
            if metrics_region == "bbox":
                p, t = _bbox_crop(pair.gt_mask, p, t)
            row = MetricRow(
                id=inst.id,
                l1=region_l1(pred, pair.target, pair.gt_mask),
                psnr=psnr(p, t),
                ssim=ssim(p, t),
                miou=None,
                area_ratio=ratio,
                bin=bin_label(ratio),
                extras={name: fn(pred, pair.target) for name, fn in _METRIC_PLUGINS.items()},
            )
            panel = (naive.astype(np.float32), pair.target, pred)
        else:
            sample = make_shape_sample(inst, sample_rng)
            pred_vis, pred_amodal = model_fn(sample)
            row = MetricRow(
                id=inst.id,
                l1=None,
                psnr=None,
                ssim=None,
                miou=miou(pred_amodal > 0.5, sample.target_amodal),
                area_ratio=ratio,
                bin=bin_label(ratio),
            )
            panel = (sample.image, _mask_to_rgb(sample.target_amodal), _mask_to_rgb(pred_amodal))
        return row, panel

    workers = _num_workers(num_workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(eval_one, range(len(instances))))
    else:
        results = [eval_one(i) for i in range(len(instances))]
    results = [r for r in results if r is not None]
    rows = [r for r, _ in results]
    panels = [p for _, p in results[:max_panels]]
    return MetricReport(
        task=task,
        seed=seed,
        resolution=resolution,
        rows=rows,
        bins=_bin_aggregates(rows) if task == "composition" else {},
        aggregates=_aggregate(rows),
        panels=panels,
    )


def write_montage(panels, path, cols: int = 4) -> None:
    """Grid of (input | GT | output) cells, `cols` cells per montage row."""
    from PIL import Image

    if not panels:
        return
    h, w = panels[0][0].shape[:2]
    n = len(panels)
    rows = math.ceil(n / cols)
    canvas = np.ones((rows * h, cols * 3 * w, 3), dtype=np.uint8) * 255
    for i, (inp, gt, out) in enumerate(panels):
        r, c = divmod(i, cols)
        for k, img in enumerate((inp, gt, out)):
            canvas[r * h : (r + 1) * h, (c * 3 + k) * w : (c * 3 + k + 1) * w] = to_uint8(img)
    Image.fromarray(canvas, mode="RGB").save(path)


def emit_report(report: MetricReport, out_dir, montage_cols: int = 4) -> dict:
    """Write report.json, report.csv, and montage.png under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    save_report(report, json_path)
    csv_path = out / "report.csv"
    fieldnames = ["id", "l1", "psnr", "ssim", "miou", "area_ratio", "bin"] + sorted(_METRIC_PLUGINS)
    with open(csv_path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
        writer.writeheader()
        for row in report.rows:
            writer.writerow({k: ("" if v is None else v) for k, v in row.as_dict().items()})
    paths = {"json": json_path, "csv": csv_path}
    if report.panels:
        montage_path = out / "montage.png"
        write_montage(report.panels, montage_path, cols=montage_cols)
        paths["montage"] = montage_path
    return paths


def compare_input_modes(concat_report: MetricReport, compose_report: MetricReport) -> dict:
    """Comparison row for the input-format ablation (reported, not asserted)."""
    a = concat_report.aggregates["psnr"]["mean"]
    b = compose_report.aggregates["psnr"]["mean"]
    return {
        "variant_a": "concat",
        "variant_b": "compose",
        "psnr_concat": a,
        "psnr_compose": b,
        "psnr_delta": None if a is None or b is None else a - b,
        "concat_not_worse": None if a is None or b is None else bool(a >= b),
    }
