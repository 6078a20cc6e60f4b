"""Inference-time composition: per-instance shape prediction + content
completion, then iterative blending onto a progressively updated background.

Instances are processed in manifest order (back to front); each step's
RGBA output is blended over the current background, which then becomes the
background for the next instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .core import alpha_blend, dilate, load_image, load_mask, resize_image, resize_mask, save_image
from .errors import ManifestError, PlacementError, ShapePredictionFailureError
from .nets import CompNet, ContentGenerator, ShapeNet, load_checkpoint, restore_net
from .training import images_to_torch, masks_to_torch

MASK_THRESHOLD = 0.5
COMP_CROP_DILATION = 2


@dataclass
class Placement:
    dx: int = 0
    dy: int = 0
    scale: float = 1.0

    def __post_init__(self):
        if self.scale <= 0:
            raise PlacementError("placement scale must be positive")


@dataclass
class SceneObject:
    """An in-memory instance ready for composition."""

    image: np.ndarray
    visible_mask: np.ndarray
    occluded: bool = False
    placement: Placement = field(default_factory=Placement)
    id: str = ""


@dataclass
class SceneInstanceRef:
    image: str
    visible_mask: str
    occluded: bool = False
    placement: Placement = field(default_factory=Placement)


@dataclass
class SceneManifest:
    background: str
    instances: list[SceneInstanceRef]
    root: Path = Path(".")


def load_scene_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read scene manifest {path}: {exc}") from exc
    if "background" not in payload or "instances" not in payload:
        raise ManifestError(f"scene manifest {path} needs 'background' and 'instances'")
    refs = []
    for i, raw in enumerate(payload["instances"]):
        try:
            placement = Placement(**raw.get("placement", {}))
            refs.append(
                SceneInstanceRef(
                    image=raw["image"],
                    visible_mask=raw["visible_mask"],
                    occluded=bool(raw.get("occluded", False)),
                    placement=placement,
                )
            )
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"scene instance {i}: {exc}") from exc
    return SceneManifest(background=payload["background"], instances=refs, root=path.parent)


class PipelineNets:
    """Loaded networks plus call counters for the inference branches."""

    def __init__(self, shape: ShapeNet, content: ContentGenerator, comp: CompNet):
        self.shape = shape.eval()
        self.content = content.eval()
        self.comp = comp.eval()
        self.shape_calls = 0
        self.content_calls = 0
        self.comp_calls = 0


def _load_net(path, name, builder):
    ckpt = load_checkpoint(path)
    meta = ckpt.meta
    net = builder(meta)
    restore_net(net, ckpt, name)
    net.eval()
    return net, meta


def load_shape_net(path):
    return _load_net(path, "shape", lambda m: ShapeNet(m["channel_mult"]))


def load_content_net(path):
    return _load_net(path, "generator", lambda m: ContentGenerator(m["channel_mult"]))


def load_comp_net(path):
    return _load_net(
        path, "comp", lambda m: CompNet(m["channel_mult"], input_mode=m.get("input_mode", "concat"))
    )


def load_pipeline_nets(shape_ckpt, content_ckpt, comp_ckpt) -> tuple[PipelineNets, dict]:
    shape, shape_meta = load_shape_net(shape_ckpt)
    content, content_meta = load_content_net(content_ckpt)
    comp, comp_meta = load_comp_net(comp_ckpt)
    metas = {"shape": shape_meta, "content": content_meta, "comp": comp_meta}
    resolutions = {m["resolution"] for m in metas.values()}
    if len(resolutions) > 1:
        raise ManifestError(f"checkpoints trained at different resolutions: {sorted(resolutions)}")
    return PipelineNets(shape, content, comp), {"resolution": resolutions.pop(), "nets": metas}


@dataclass
class CompletionRecord:
    pred_vis: np.ndarray
    pred_amodal: np.ndarray
    m_inv: np.ndarray
    coarse: np.ndarray | None
    refined_raw: np.ndarray | None
    completed: np.ndarray
    no_occlusion: bool


def _to_np_image(t: torch.Tensor) -> np.ndarray:
    return t[0].permute(1, 2, 0).numpy().astype(np.float32)


def _complete_full(image, m_vis, nets: PipelineNets) -> CompletionRecord:
    if m_vis.sum() <= 0:
        raise ShapePredictionFailureError("visible mask is empty")
    with torch.no_grad():
        nets.shape_calls += 1
        pv, pa = nets.shape(images_to_torch([image]), masks_to_torch([m_vis]))
    pred_vis = (pv[0, 0].numpy() > MASK_THRESHOLD).astype(np.float32)
    pred_amodal = (pa[0, 0].numpy() > MASK_THRESHOLD).astype(np.float32)
    if pred_amodal.sum() <= 0:
        raise ShapePredictionFailureError("predicted amodal mask is empty")
    if (pred_vis * pred_amodal).sum() <= 0:
        raise ShapePredictionFailureError("predicted visible mask is empty")
    m_inv = pred_amodal * (1.0 - pred_vis)
    if m_inv.sum() <= 0:
        completed = image * pred_vis[..., None]
        return CompletionRecord(pred_vis, pred_amodal, m_inv, None, None, completed.astype(np.float32), True)
    masked = image * pred_vis[..., None]
    with torch.no_grad():
        nets.content_calls += 1
        coarse_t, refined_t = nets.content(
            images_to_torch([masked]), masks_to_torch([pred_vis]), masks_to_torch([m_inv])
        )
    refined = _to_np_image(refined_t)
    completed = refined * pred_amodal[..., None]
    return CompletionRecord(
        pred_vis, pred_amodal, m_inv, _to_np_image(coarse_t), refined, completed.astype(np.float32), False
    )


def complete_instance(image, m_vis, shape_net, content_net):
    """Predict the amodal mask and synthesize the hidden content.

    Returns (completed object image, predicted amodal mask); the completed
    image is zero outside the predicted amodal mask.
    """
    nets = PipelineNets.__new__(PipelineNets)
    nets.shape = shape_net.eval()
    nets.content = content_net.eval()
    nets.shape_calls = nets.content_calls = nets.comp_calls = 0
    rec = _complete_full(image, m_vis, nets)
    return rec.completed, rec.pred_amodal


def apply_placement(obj_img: np.ndarray, mask: np.ndarray, placement: Placement):
    """Scale (bilinear image / nearest mask) and translate onto a zero canvas."""
    h, w = mask.shape
    if placement.scale == 1.0 and placement.dx == 0 and placement.dy == 0:
        return obj_img.copy(), mask.copy()
    sh = max(1, round(h * placement.scale))
    sw = max(1, round(w * placement.scale))
    img_s = resize_image(obj_img, sh, sw)
    mask_s = resize_mask(mask, sh, sw)
    canvas_img = np.zeros_like(obj_img)
    canvas_mask = np.zeros_like(mask)
    oy, ox = int(placement.dy), int(placement.dx)
    ys0, xs0 = max(0, oy), max(0, ox)
    ys1, xs1 = min(h, oy + sh), min(w, ox + sw)
    if ys1 > ys0 and xs1 > xs0:
        canvas_img[ys0:ys1, xs0:xs1] = img_s[ys0 - oy : ys1 - oy, xs0 - ox : xs1 - ox]
        canvas_mask[ys0:ys1, xs0:xs1] = mask_s[ys0 - oy : ys1 - oy, xs0 - ox : xs1 - ox]
    if canvas_mask.sum() <= 0:
        raise PlacementError(
            f"placement (dx={placement.dx}, dy={placement.dy}, scale={placement.scale}) leaves no mask in frame"
        )
    return canvas_img, canvas_mask


@dataclass
class TraceStep:
    index: int
    instance_id: str
    occluded: bool
    skipped: str | None
    no_occlusion: bool
    pred_vis: np.ndarray | None
    pred_amodal: np.ndarray | None
    completed: np.ndarray | None
    placed_object: np.ndarray | None
    placed_mask: np.ndarray | None
    i_out: np.ndarray | None
    alpha: np.ndarray | None
    bg_before: np.ndarray
    composite: np.ndarray


@dataclass
class CompositionTrace:
    steps: list[TraceStep]


def compose_objects(background: np.ndarray, objects: list[SceneObject], nets: PipelineNets, lenient: bool = False):
    """Core of the inference loop over already-loaded objects."""
    composite = background.astype(np.float32).copy()
    steps = []
    for j, obj in enumerate(objects):
        bg_before = composite.copy()
        try:
            if obj.occluded:
                rec = _complete_full(obj.image, obj.visible_mask, nets)
                if rec.no_occlusion:
                    source_img, source_mask = rec.completed, rec.pred_vis
                else:
                    # keep a little boundary context around the completed object
                    crop = dilate(rec.pred_amodal, COMP_CROP_DILATION)
                    source_img = rec.refined_raw * crop[..., None]
                    source_mask = rec.pred_amodal
            else:
                rec = None
                source_img = obj.image * obj.visible_mask[..., None]
                source_mask = obj.visible_mask
            placed_img, placed_mask = apply_placement(source_img, source_mask, obj.placement)
            support = dilate(placed_mask, COMP_CROP_DILATION)
            with torch.no_grad():
                nets.comp_calls += 1
                i_out_t, alpha_t = nets.comp(
                    images_to_torch([composite]), images_to_torch([placed_img]), masks_to_torch([support])
                )
            i_out = _to_np_image(i_out_t)
            alpha = alpha_t[0, 0].numpy().astype(np.float32)
            composite = alpha_blend(i_out, composite, alpha).astype(np.float32)
            steps.append(
                TraceStep(
                    index=j,
                    instance_id=obj.id or str(j),
                    occluded=obj.occluded,
                    skipped=None,
                    no_occlusion=rec.no_occlusion if rec else False,
                    pred_vis=rec.pred_vis if rec else None,
                    pred_amodal=rec.pred_amodal if rec else None,
                    completed=rec.completed if rec else None,
                    placed_object=placed_img,
                    placed_mask=placed_mask,
                    i_out=i_out,
                    alpha=alpha,
                    bg_before=bg_before,
                    composite=composite.copy(),
                )
            )
        except Exception as exc:
            if not lenient:
                raise
            steps.append(
                TraceStep(
                    index=j,
                    instance_id=obj.id or str(j),
                    occluded=obj.occluded,
                    skipped=f"{type(exc).__name__}: {exc}",
                    no_occlusion=False,
                    pred_vis=None,
                    pred_amodal=None,
                    completed=None,
                    placed_object=None,
                    placed_mask=None,
                    i_out=None,
                    alpha=None,
                    bg_before=bg_before,
                    composite=composite.copy(),
                )
            )
    return composite, CompositionTrace(steps)


def load_scene_objects(scene: SceneManifest, resolution: int) -> tuple[np.ndarray, list[SceneObject]]:
    background = resize_image(load_image(scene.root / scene.background), resolution, resolution)
    objects = []
    for i, ref in enumerate(scene.instances):
        image = resize_image(load_image(scene.root / ref.image), resolution, resolution)
        mask = resize_mask(load_mask(scene.root / ref.visible_mask), resolution, resolution)
        if mask.sum() <= 0:
            raise ManifestError(f"scene instance {i}: visible mask is empty")
        objects.append(
            SceneObject(image=image, visible_mask=mask, occluded=ref.occluded, placement=ref.placement, id=str(i))
        )
    return background, objects


def compose_scene(scene: SceneManifest, nets: PipelineNets, resolution: int, lenient: bool = False):
    background, objects = load_scene_objects(scene, resolution)
    return compose_objects(background, objects, nets, lenient=lenient)


def write_trace(trace: CompositionTrace, out_dir) -> None:
    """Per-step PNGs plus a JSON index describing each record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for step in trace.steps:
        entry = {
            "index": step.index,
            "instance_id": step.instance_id,
            "occluded": step.occluded,
            "no_occlusion": step.no_occlusion,
            "skipped": step.skipped,
            "files": {},
        }
        panels = {
            "completed": step.completed,
            "placed_object": step.placed_object,
            "i_out": step.i_out,
            "composite": step.composite,
        }
        for name, img in panels.items():
            if img is None:
                continue
            rel = f"step_{step.index:02d}_{name}.png"
            save_image(img, out / rel)
            entry["files"][name] = rel
        for name, mask in (("alpha", step.alpha), ("pred_amodal", step.pred_amodal), ("placed_mask", step.placed_mask)):
            if mask is None:
                continue
            rel = f"step_{step.index:02d}_{name}.png"
            save_image(np.repeat(np.clip(mask, 0, 1)[..., None], 3, axis=2), out / rel)
            entry["files"][name] = rel
        index.append(entry)
    (out / "index.json").write_text(json.dumps(index, indent=1))
