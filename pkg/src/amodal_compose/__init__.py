"""Amodal object completion and color-consistent layered image composition."""

__version__ = "0.1.0"

from .core import Rng, alpha_blend, dilate, erode, overlap_ratio

__all__ = ["Rng", "alpha_blend", "dilate", "erode", "overlap_ratio", "__version__"]
