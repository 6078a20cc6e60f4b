"""Self-supervised sample factories for the three training tasks.

Each factory is pure given (instance, rng): occlusion triplets for content
completion, inpainted-background/edited-object pairs for compositing, and
morphologically edited masks for shape prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Rng, dilate, erode, overlap_ratio, resize_mask
from ..errors import SamplingFailureError
from .classical import color_transfer, inpaint_background
from .manifest import Instance

OVERLAP_RANGE = (0.1, 0.9)
MAX_DILATE_ITERS = 25
MAX_EDIT_PIXELS = 2


@dataclass
class OcclusionSample:
    masked_object: np.ndarray  # object with the sampled occlusion removed
    m_vis: np.ndarray
    m_inv: np.ndarray
    target: np.ndarray  # the full object image


@dataclass
class CompTrainingPair:
    background: np.ndarray  # object region inpainted away
    edited_object: np.ndarray  # color-transferred, coarsely-cropped object
    target: np.ndarray  # original image
    gt_mask: np.ndarray
    support_mask: np.ndarray  # dilated crop support of edited_object
    dilate_iters: int


@dataclass
class ShapeSample:
    image: np.ndarray
    m_edit: np.ndarray
    target_vis: np.ndarray
    target_amodal: np.ndarray


def _bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask > 0.5)
    return ys.min(), ys.max(), xs.min(), xs.max()


def _place_donor(donor: np.ndarray, target: np.ndarray, rng: Rng) -> np.ndarray:
    """Scale the donor mask and translate it so its bbox overlaps the target's."""
    h, w = target.shape
    scale = rng.uniform(0.5, 1.5)
    sh, sw = max(1, round(donor.shape[0] * scale)), max(1, round(donor.shape[1] * scale))
    scaled = resize_mask(donor, sh, sw)
    if scaled.sum() <= 0:
        return np.zeros_like(target)
    dy0, dy1, dx0, dx1 = _bbox(scaled)
    ty0, ty1, tx0, tx1 = _bbox(target)
    # offset ranges guaranteeing >= 1 px of bbox intersection
    oy = int(rng.integers(ty0 - dy1, ty1 - dy0 + 1))
    ox = int(rng.integers(tx0 - dx1, tx1 - dx0 + 1))
    canvas = np.zeros_like(target)
    ys0, xs0 = max(0, oy), max(0, ox)
    ys1, xs1 = min(h, oy + sh), min(w, ox + sw)
    if ys1 > ys0 and xs1 > xs0:
        canvas[ys0:ys1, xs0:xs1] = scaled[ys0 - oy : ys1 - oy, xs0 - ox : xs1 - ox]
    return canvas


def sample_occlusion(
    instance: Instance,
    donor_masks: list[np.ndarray],
    rng: Rng,
    max_attempts: int = 50,
    include_background: bool = False,
) -> OcclusionSample:
    """Occlude part of the object with a randomly placed donor mask.

    Rejection-samples transforms of one random donor until the occluded
    fraction lands in OVERLAP_RANGE; raises SamplingFailureError after
    `max_attempts` (callers retry with a fresh rng, selecting a new donor).
    """
    if not donor_masks:
        raise SamplingFailureError("donor mask pool is empty")
    m = instance.visible_mask
    donor = donor_masks[int(rng.integers(0, len(donor_masks)))]
    for _ in range(max_attempts):
        placed = _place_donor(donor, m, rng)
        m_inv = m * placed
        ratio = overlap_ratio(m_inv, m)
        if OVERLAP_RANGE[0] <= ratio <= OVERLAP_RANGE[1]:
            m_vis = m * (1.0 - placed)
            target = instance.image * m[..., None]
            if include_background:
                masked = instance.image * (1.0 - m_inv[..., None])
            else:
                masked = target * m_vis[..., None]
            return OcclusionSample(
                masked_object=masked.astype(np.float32),
                m_vis=m_vis.astype(np.float32),
                m_inv=m_inv.astype(np.float32),
                target=target.astype(np.float32),
            )
    raise SamplingFailureError(
        f"no overlap in {OVERLAP_RANGE} after {max_attempts} attempts for {instance.id}"
    )


def sample_occlusion_retrying(
    instance: Instance,
    donor_masks: list[np.ndarray],
    rng: Rng,
    donor_retries: int = 8,
    **kwargs,
) -> OcclusionSample:
    """sample_occlusion, retrying with a fresh donor when one fails."""
    for attempt in range(donor_retries):
        try:
            return sample_occlusion(instance, donor_masks, rng.child(attempt), **kwargs)
        except SamplingFailureError:
            continue
    raise SamplingFailureError(f"all {donor_retries} donors failed for {instance.id}")


def make_comp_pair(
    instance: Instance,
    reference: Instance,
    rng: Rng,
    inpainter=inpaint_background,
    color_space: str = "lab",
    stats_on_object: bool = False,
) -> CompTrainingPair:
    """Build (inpainted background, coarsely-cropped color-shifted object)."""
    m = instance.visible_mask
    background = inpainter(instance.image, m)
    iters = int(rng.integers(0, MAX_DILATE_ITERS + 1))
    support = dilate(m, iters)
    transferred = color_transfer(
        instance.image,
        reference.image,
        space=color_space,
        stats_mask=m if stats_on_object else None,
    )
    edited = transferred * support[..., None]
    return CompTrainingPair(
        background=background.astype(np.float32),
        edited_object=edited.astype(np.float32),
        target=instance.image.astype(np.float32),
        gt_mask=m.astype(np.float32),
        support_mask=support.astype(np.float32),
        dilate_iters=iters,
    )


def make_shape_sample(instance: Instance, rng: Rng, max_edit: int = MAX_EDIT_PIXELS) -> ShapeSample:
    """Randomly dilate or erode the visible mask into the rough m_edit input."""
    if instance.amodal_mask is None:
        raise ValueError(f"instance {instance.id} lacks an amodal mask")
    m_vis = instance.visible_mask
    k = int(rng.integers(0, max_edit + 1))
    if rng.uniform() < 0.5:
        m_edit = dilate(m_vis, k)
    else:
        m_edit = erode(m_vis, k)
        if m_edit.sum() <= 0:
            m_edit = m_vis.copy()
    return ShapeSample(
        image=instance.image.astype(np.float32),
        m_edit=m_edit.astype(np.float32),
        target_vis=m_vis.astype(np.float32),
        target_amodal=instance.amodal_mask.astype(np.float32),
    )


class InpaintCache:
    """Per-instance memo for the (deterministic) background inpainting."""

    def __init__(self, inpainter=inpaint_background):
        self._inpainter = inpainter
        self._memo: dict[str, np.ndarray] = {}

    def __call__(self, image: np.ndarray, mask: np.ndarray, key: str | None = None) -> np.ndarray:
        if key is None:
            return self._inpainter(image, mask)
        if key not in self._memo:
            self._memo[key] = self._inpainter(image, mask)
        return self._memo[key]

    def for_instance(self, instance: Instance):
        return lambda image, mask: self(image, mask, key=instance.id)
