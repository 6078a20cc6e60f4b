"""Building blocks: gated convolution, upsample-conv, contextual attention."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import AttentionDegenerateError


def _same_pad(kernel: int, dilation: int = 1) -> int:
    return dilation * (kernel - 1) // 2


class GatedConv2d(nn.Module):
    """Two parallel convolutions with identical geometry; the feature branch
    is modulated per pixel by a sigmoid gate: out = ELU(conv_f(x)) * sigmoid(conv_g(x))."""

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, dilation=1):
        super().__init__()
        pad = _same_pad(kernel_size, dilation)
        self.conv_feature = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=stride, padding=pad, dilation=dilation
        )
        self.conv_gate = nn.Conv2d(
            in_channels, out_channels, kernel_size, stride=stride, padding=pad, dilation=dilation
        )

    def forward(self, x):
        return F.elu(self.conv_feature(x)) * torch.sigmoid(self.conv_gate(x))


class UpsampleConv(nn.Module):
    """Nearest-neighbor 2x upsample followed by a 3x3 convolution.

    Used for the generator "deconv" rows; avoids checkerboard artifacts.
    `activation` is "elu" for intermediate layers or "scaled_tanh" for the
    final RGB layer (maps into [0, 1]).
    """

    def __init__(self, in_channels, out_channels, activation="elu"):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.activation = activation

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.conv(x)
        if self.activation == "elu":
            return F.elu(x)
        if self.activation == "scaled_tanh":
            return (torch.tanh(x) + 1.0) / 2.0
        return x


class ContextualAttention(nn.Module):
    """Patch-matching attention that fills hole features from visible patches.

    For each hole location the k x k feature patch is scored by cosine
    similarity against every fully-valid patch, softmax-weighted with a scale
    factor, and replaced by the weighted sum of the matched patches' center
    features. Valid-region features pass through unchanged. Parameter-free.
    """

    def __init__(self, patch_size=3, softmax_scale=10.0, stride=1):
        super().__init__()
        self.patch_size = patch_size
        self.softmax_scale = softmax_scale
        self.stride = stride

    def forward(self, fg_feat, bg_feat, m_inv):
        if fg_feat.shape[-2:] != bg_feat.shape[-2:]:
            raise ValueError("fg/bg feature maps must share spatial dims")
        n, c, h, w = fg_feat.shape
        k = self.patch_size
        mask = F.interpolate(m_inv, size=(h, w), mode="nearest")

        outs = []
        for i in range(n):
            hole = mask[i, 0]
            if hole.max() <= 0:
                outs.append(fg_feat[i : i + 1])
                continue
            # a candidate patch is valid iff its window contains no hole
            # pixel; if the hole leaves no such window (coarse feature
            # grids), fall back to patches with hole-free centers
            hole_hit = F.max_pool2d(hole[None, None], k, stride=1, padding=k // 2)[0, 0]
            valid = hole_hit <= 0
            if not bool(valid.any()):
                valid = hole <= 0
            if self.stride > 1:
                grid = torch.zeros_like(valid)
                grid[:: self.stride, :: self.stride] = True
                valid = valid & grid
            valid_flat = valid.flatten()
            if not bool(valid_flat.any()):
                raise AttentionDegenerateError("no visible patches to attend to")

            bg_patches = F.unfold(bg_feat[i : i + 1], k, padding=k // 2)[0].T  # (HW, C*k*k)
            fg_patches = F.unfold(fg_feat[i : i + 1], k, padding=k // 2)[0].T
            cand = bg_patches[valid_flat]
            cand_n = cand / cand.norm(dim=1, keepdim=True).clamp(min=1e-8)

            hole_idx = hole.flatten().nonzero(as_tuple=True)[0]
            q = fg_patches[hole_idx]
            q_n = q / q.norm(dim=1, keepdim=True).clamp(min=1e-8)
            weights = torch.softmax(self.softmax_scale * (q_n @ cand_n.T), dim=1)

            centers = bg_feat[i].reshape(c, h * w).T  # (HW, C)
            recon = weights @ centers[valid_flat]  # (holes, C)

            filled = torch.zeros(h * w, c, dtype=fg_feat.dtype, device=fg_feat.device)
            filled = filled.index_put((hole_idx,), recon)
            filled = filled.T.reshape(1, c, h, w)
            m = hole[None, None]
            outs.append(fg_feat[i : i + 1] * (1.0 - m) + filled * m)
        return torch.cat(outs, dim=0)
