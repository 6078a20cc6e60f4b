"""Synthetic layered-shape scenes with exact visible and amodal masks.

Each scene is a textured background (smooth gradient plus low-amplitude
noise) holding 2-4 mutually occluding shapes, painted back to front. The
amodal mask of each shape is its full analytic rasterization; the visible
mask subtracts everything painted over it, so amodal ground truth is exact
by construction.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image

from ..core import Rng, save_image, save_mask
from .manifest import DatasetManifest, ManifestEntry, save_manifest

MIN_SHAPE_AREA = 20
# slivers below this visible area are dropped: they cannot satisfy the
# occlusion sampler's overlap-ratio window and carry no usable appearance
MIN_VISIBLE_AREA = 8


def _grid(res: int):
    ys, xs = np.mgrid[0:res, 0:res].astype(np.float64)
    return xs, ys


def _linear_gradient(res: int, c0, c1, angle: float) -> np.ndarray:
    xs, ys = _grid(res)
    t = (xs * math.cos(angle) + ys * math.sin(angle)) / res
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    return c0[None, None, :] + t[..., None] * (c1 - c0)[None, None, :]


def make_background(rng: Rng, res: int) -> np.ndarray:
    c0 = rng.uniform(0.1, 0.9, 3)
    c1 = rng.uniform(0.1, 0.9, 3)
    bg = _linear_gradient(res, c0, c1, rng.uniform(0, 2 * math.pi))
    # value noise: coarse uniform grid, bilinearly upsampled
    coarse = rng.uniform(-1, 1, (8, 8, 3))
    noise = np.stack(
        [
            np.asarray(
                Image.fromarray((coarse[..., c] * 127 + 128).astype(np.uint8)).resize(
                    (res, res), Image.BILINEAR
                ),
                dtype=np.float64,
            )
            / 127.0
            - 128.0 / 127.0
            for c in range(3)
        ],
        axis=-1,
    )
    return np.clip(bg + 0.04 * noise, 0.0, 1.0)


def _ellipse_mask(rng: Rng, res: int) -> np.ndarray:
    xs, ys = _grid(res)
    cx, cy = rng.uniform(0.2, 0.8, 2) * res
    rx = rng.uniform(0.08, 0.28) * res
    ry = rng.uniform(0.08, 0.28) * res
    theta = rng.uniform(0, math.pi)
    dx, dy = xs - cx, ys - cy
    xr = dx * math.cos(theta) + dy * math.sin(theta)
    yr = -dx * math.sin(theta) + dy * math.cos(theta)
    return ((xr / rx) ** 2 + (yr / ry) ** 2 <= 1.0).astype(np.float32)


def _polygon_mask(rng: Rng, res: int) -> np.ndarray:
    # convex polygon: sorted angles around a center, varying radii
    n = int(rng.integers(5, 8))
    cx, cy = rng.uniform(0.25, 0.75, 2) * res
    angles = np.sort(rng.uniform(0, 2 * math.pi, n))
    radii = rng.uniform(0.08, 0.28, n) * res
    vx = cx + radii * np.cos(angles)
    vy = cy + radii * np.sin(angles)
    xs, ys = _grid(res)
    inside = np.ones((res, res), dtype=bool)
    for i in range(n):
        j = (i + 1) % n
        ex, ey = vx[j] - vx[i], vy[j] - vy[i]
        cross = ex * (ys - vy[i]) - ey * (xs - vx[i])
        inside &= cross >= 0
    return inside.astype(np.float32)


def _rounded_rect_mask(rng: Rng, res: int) -> np.ndarray:
    xs, ys = _grid(res)
    cx, cy = rng.uniform(0.2, 0.8, 2) * res
    hw = rng.uniform(0.08, 0.26) * res
    hh = rng.uniform(0.08, 0.26) * res
    r = rng.uniform(0.1, 0.5) * min(hw, hh)
    theta = rng.uniform(0, math.pi)
    dx, dy = xs - cx, ys - cy
    xr = dx * math.cos(theta) + dy * math.sin(theta)
    yr = -dx * math.sin(theta) + dy * math.cos(theta)
    qx = np.maximum(np.abs(xr) - (hw - r), 0.0)
    qy = np.maximum(np.abs(yr) - (hh - r), 0.0)
    return (qx**2 + qy**2 <= r**2).astype(np.float32)


_SHAPE_FNS = (_ellipse_mask, _polygon_mask, _rounded_rect_mask)


def _shape_fill(rng: Rng, res: int) -> np.ndarray:
    if rng.uniform() < 0.5:
        return np.broadcast_to(rng.uniform(0.05, 0.95, 3), (res, res, 3)).copy()
    return np.clip(
        _linear_gradient(res, rng.uniform(0.05, 0.95, 3), rng.uniform(0.05, 0.95, 3), rng.uniform(0, 2 * math.pi)),
        0.0,
        1.0,
    )


def _sample_shape(rng: Rng, res: int) -> np.ndarray:
    for _ in range(20):
        fn = _SHAPE_FNS[int(rng.integers(0, len(_SHAPE_FNS)))]
        mask = fn(rng, res)
        if mask.sum() >= MIN_SHAPE_AREA:
            return mask
    return mask


def generate_scene(rng: Rng, res: int):
    """Returns (image, [(amodal, visible)]) for one scene, back to front."""
    image = make_background(rng, res)
    n_shapes = int(rng.integers(2, 5))
    amodals = [_sample_shape(rng, res) for _ in range(n_shapes)]
    for amodal in amodals:
        fill = _shape_fill(rng, res)
        m = amodal[..., None]
        image = image * (1.0 - m) + fill * m
    visibles = []
    for i, amodal in enumerate(amodals):
        cover = np.zeros_like(amodal)
        for later in amodals[i + 1 :]:
            cover = np.maximum(cover, later)
        visibles.append(amodal * (1.0 - cover))
    return image.astype(np.float32), list(zip(amodals, visibles))


def generate_synthetic_dataset(n_scenes: int, rng: Rng, out_dir, resolution: int = 64) -> DatasetManifest:
    """Write `n_scenes` scenes plus per-instance masks and a manifest.json."""
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in range(n_scenes):
        scene_rng = rng.child("scene", s)
        image, shapes = generate_scene(scene_rng, resolution)
        img_rel = f"images/s{s:04d}.png"
        save_image(image, out / img_rel)
        for i, (amodal, visible) in enumerate(shapes):
            if visible.sum() < MIN_VISIBLE_AREA:
                continue
            iid = f"s{s:04d}_i{i:02d}"
            vis_rel = f"masks/{iid}_vis.png"
            amo_rel = f"masks/{iid}_amodal.png"
            save_mask(visible, out / vis_rel)
            save_mask(amodal, out / amo_rel)
            entries.append(
                ManifestEntry(id=iid, image=img_rel, visible_mask=vis_rel, amodal_mask=amo_rel)
            )
    manifest = DatasetManifest(root=out, entries=entries)
    save_manifest(manifest, out / "manifest.json")
    return manifest
