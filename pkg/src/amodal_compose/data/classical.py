"""Classical stand-ins for the off-the-shelf tools used in data preparation:
diffusion-based hole filling and Reinhard-style statistical color transfer.
Both accept drop-in replacements via the factory hooks.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateMaskError

# Reinhard's RGB <-> LMS <-> decorrelated opponent space. The exact inverse
# replaces the published (rounded) LMS->RGB matrix so the transform
# round-trips cleanly.
_RGB2LMS = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
_LMS2RGB = np.linalg.inv(_RGB2LMS)
_OPP = np.array([[1, 1, 1], [1, 1, -2], [1, -1, 0]], dtype=np.float64)
_OPP_SCALE = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)])
_LOG_EPS = 1e-6
_STD_FLOOR = 1e-4


def inpaint_background(image: np.ndarray, m: np.ndarray, tol: float = 1e-4, max_iters: int = 500) -> np.ndarray:
    """Fill the region marked by m with iterative 4-neighbor diffusion.

    Pixels outside m are never modified. Stops when the largest per-pixel
    change drops below `tol` or after `max_iters` sweeps.
    """
    hole = m > 0.5
    if not hole.any():
        return image.copy()
    if hole.all():
        raise DegenerateMaskError("inpaint_background: mask covers the whole image")
    out = image.astype(np.float64).copy()
    known = ~hole
    # seed the hole with the mean of the known region for faster settling
    out[hole] = out[known].reshape(-1, 3).mean(axis=0)
    for _ in range(max_iters):
        padded = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        ) / 4.0
        delta = np.abs(avg[hole] - out[hole]).max()
        out[hole] = avg[hole]
        if delta < tol:
            break
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def _to_opponent(rgb: np.ndarray) -> np.ndarray:
    lms = rgb.astype(np.float64) @ _RGB2LMS.T
    log_lms = np.log10(np.maximum(lms, _LOG_EPS))
    return log_lms @ (_OPP_SCALE @ _OPP).T


def _from_opponent(opp: np.ndarray) -> np.ndarray:
    log_lms = opp @ np.linalg.inv(_OPP_SCALE @ _OPP).T
    lms = np.power(10.0, log_lms)
    return lms @ _LMS2RGB.T


def color_transfer(
    image: np.ndarray,
    reference: np.ndarray,
    space: str = "lab",
    stats_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Match per-channel mean/std of `image` to `reference`.

    Statistics run in Reinhard's decorrelated opponent space ("lab") or
    plain "rgb". `stats_mask` optionally restricts the source statistics to
    the object region; the default uses the whole image.
    """
    if space not in ("lab", "rgb"):
        raise ValueError(f"unknown color space {space!r}")
    to_space = _to_opponent if space == "lab" else (lambda x: x.astype(np.float64))
    from_space = _from_opponent if space == "lab" else (lambda x: x)

    src = to_space(image)
    ref = to_space(reference)
    if stats_mask is not None:
        sel = src[stats_mask > 0.5].reshape(-1, 3)
    else:
        sel = src.reshape(-1, 3)
    mu_s, sd_s = sel.mean(axis=0), sel.std(axis=0)
    flat_ref = ref.reshape(-1, 3)
    mu_r, sd_r = flat_ref.mean(axis=0), flat_ref.std(axis=0)
    sd_s = np.maximum(sd_s, _STD_FLOOR)
    out = (src - mu_s) * (sd_r / sd_s) + mu_r
    return np.clip(from_space(out), 0.0, 1.0).astype(image.dtype)
