"""Image/mask value conventions, morphology, alpha blending, and seeded randomness.

Conventions used throughout the package:
  - images are float numpy arrays of shape (H, W, 3) with values in [0, 1]
  - masks are float numpy arrays of shape (H, W) with values in {0, 1}
  - soft masks (alpha maps) are float (H, W) arrays in [0, 1]

File I/O maps 8-bit [0, 255] linearly onto [0, 1]; mask files threshold at 0.5.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

from .errors import DegenerateMaskError, DimensionError


def validate_image(img: np.ndarray) -> np.ndarray:
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def validate_mask(m: np.ndarray) -> np.ndarray:
    if m.ndim != 2:
        raise DimensionError(f"expected (H, W) mask, got shape {m.shape}")
    vals = np.unique(m)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise ValueError("mask must be strictly binary")
    return m


def alpha_blend(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Per-pixel blend alpha*fg + (1-alpha)*bg.

    `alpha` is (H, W) or (H, W, 1); fg/bg must share H and W with it.
    """
    if alpha.ndim == 2:
        alpha = alpha[..., None]
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape[:2]:
        raise DimensionError(
            f"shape mismatch: fg {fg.shape}, bg {bg.shape}, alpha {alpha.shape}"
        )
    return alpha * fg + (1.0 - alpha) * bg


def dilate(m: np.ndarray, iters: int) -> np.ndarray:
    """Grow a binary mask by `iters` pixels of 4-connected expansion."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    out = m.astype(bool)
    for _ in range(iters):
        p = np.pad(out, 1)
        out = (
            p[1:-1, 1:-1]
            | p[:-2, 1:-1]
            | p[2:, 1:-1]
            | p[1:-1, :-2]
            | p[1:-1, 2:]
        )
    return out.astype(m.dtype)


def erode(m: np.ndarray, pixels: int) -> np.ndarray:
    """Shrink a binary mask; exact dual of dilate: 1 - dilate(1 - m, pixels)."""
    if pixels < 0:
        raise ValueError("pixels must be >= 0")
    inv = 1.0 - m.astype(np.float64)
    return (1.0 - dilate(inv, pixels)).astype(m.dtype)


def overlap_ratio(m_inv: np.ndarray, m: np.ndarray) -> float:
    """||m_inv||_1 / ||m||_1; the occluded fraction of an object mask."""
    denom = float(m.sum())
    if denom <= 0:
        raise DegenerateMaskError("overlap_ratio: reference mask is empty")
    return float(m_inv.sum()) / denom


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / 255.0


def save_image(img: np.ndarray, path) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    return from_uint8(np.asarray(Image.open(path).convert("RGB")))


def save_mask(m: np.ndarray, path) -> None:
    Image.fromarray((m > 0.5).astype(np.uint8) * 255, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr.astype(np.float32) / 255.0 > 0.5).astype(np.float32)


def resize_image(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize, staying in [0, 1]."""
    pil = Image.fromarray(to_uint8(img), mode="RGB")
    return from_uint8(np.asarray(pil.resize((width, height), Image.BILINEAR)))


def resize_mask(m: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize; preserves binarity."""
    pil = Image.fromarray((m > 0.5).astype(np.uint8), mode="L")
    return np.asarray(pil.resize((width, height), Image.NEAREST)).astype(np.float32)


def _key_to_int(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    digest = hashlib.sha256(str(part).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Seeded random stream with deterministic child derivation.

    Identical seeds reproduce identical sample sequences. Workers must not
    share an Rng; derive one per worker/step with `child(...)`.
    """

    def __init__(self, seed: int, _spawn_key: tuple = ()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self.gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, *parts) -> "Rng":
        key = self._spawn_key + tuple(_key_to_int(p) for p in parts)
        return Rng(self.seed, key)

    # Conveniences so call sites read like numpy.
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True):
        return self.gen.choice(a, size=size, replace=replace)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def shuffle(self, x):
        self.gen.shuffle(x)
