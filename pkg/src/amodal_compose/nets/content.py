"""Two-stage object completion generator and the Wasserstein critic.

The generator input is the 5-channel triplet (masked object, visible mask,
invisible mask). The coarse stage is a dilated gated-conv stack; the refine
stage adds three attention-augmented layers. "deconv" rows are
nearest-upsample + 3x3 conv; the final RGB layer of each stage squashes to
[0, 1] with a scaled tanh.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .arch import LayerSpec, fingerprint, scaled_channels
from .layers import ContextualAttention, GatedConv2d, UpsampleConv

# (kind, base channels, kernel, stride, dilation, repeat, out_div)
COARSE_PLAN = [
    ("gated_conv", 32, 5, 2, 1, 1, 2),
    ("gated_conv", 64, 3, 1, 1, 1, 2),
    ("gated_conv", 64, 3, 2, 1, 1, 4),
    ("gated_conv", 64, 3, 1, 1, 6, 4),
    ("gated_conv", 64, 3, 1, 2, 5, 4),
    ("gated_conv", 64, 3, 1, 4, 4, 4),
    ("gated_conv", 64, 3, 1, 8, 2, 4),
    ("gated_conv", 64, 3, 1, 1, 3, 4),
    ("upsample_conv", 32, 3, 1, 1, 1, 2),
    ("upsample_conv", 3, 3, 1, 1, 1, 1),
]

REFINE_PLAN = [
    ("gated_conv", 32, 5, 2, 1, 1, 2),
    ("gated_conv", 32, 3, 1, 1, 1, 2),
    ("gated_conv", 64, 3, 2, 1, 1, 4),
    ("gated_conv", 128, 3, 2, 1, 1, 8),
    ("gated_conv", 128, 3, 1, 1, 2, 8),
    ("gated_conv", 128, 3, 1, 2, 1, 8),
    ("gated_conv", 128, 3, 1, 4, 1, 8),
    ("gated_conv", 128, 3, 1, 8, 1, 8),
    ("gated_conv", 128, 3, 1, 16, 1, 8),
    ("gated_conv+attn", 128, 3, 1, 1, 1, 8),
    ("upsample_conv", 64, 3, 1, 1, 1, 4),
    ("gated_conv+attn", 64, 3, 1, 1, 1, 4),
    ("upsample_conv", 32, 3, 1, 1, 1, 2),
    ("gated_conv+attn", 32, 3, 1, 1, 1, 2),
    ("upsample_conv", 3, 3, 1, 1, 1, 1),
]

CRITIC_CHANNELS = (64, 128, 256, 512, 512)


def _plan_specs(plan, multiplier, final_rgb=True) -> list[LayerSpec]:
    specs = []
    total = sum(rep for _, _, _, _, _, rep, _ in plan)
    seen = 0
    for kind, ch, k, s, d, rep, div in plan:
        for _ in range(rep):
            seen += 1
            final = final_rgb and seen == total
            out_ch = ch if final else scaled_channels(ch, multiplier)
            base = "upsample_conv" if kind == "upsample_conv" else "gated_conv"
            specs.append(
                LayerSpec(
                    kind=base,
                    out_channels=out_ch,
                    kernel=k,
                    stride=s,
                    dilation=d,
                    activation="scaled_tanh" if final else "elu",
                    out_div=div,
                )
            )
            if kind == "gated_conv+attn":
                specs.append(LayerSpec(kind="attention", out_channels=out_ch, out_div=div))
    return specs


class _GatedStack(nn.Module):
    """Sequential stack driven by a plan; attention blocks consume m_inv."""

    def __init__(self, in_channels, plan, multiplier, attention_kwargs):
        super().__init__()
        self.blocks = nn.ModuleList()
        self.block_kinds = []
        prev = in_channels
        total = sum(rep for _, _, _, _, _, rep, _ in plan)
        seen = 0
        for kind, ch, k, s, d, rep, _div in plan:
            for _ in range(rep):
                seen += 1
                final = seen == total
                out_ch = ch if final else scaled_channels(ch, multiplier)
                if kind == "upsample_conv":
                    self.blocks.append(
                        UpsampleConv(prev, out_ch, activation="scaled_tanh" if final else "elu")
                    )
                    self.block_kinds.append("upsample_conv")
                else:
                    self.blocks.append(GatedConv2d(prev, out_ch, k, stride=s, dilation=d))
                    self.block_kinds.append("gated_conv")
                    if kind == "gated_conv+attn":
                        self.blocks.append(ContextualAttention(**attention_kwargs))
                        self.block_kinds.append("attention")
                prev = out_ch

    def forward(self, x, m_inv):
        for kind, block in zip(self.block_kinds, self.blocks):
            if kind == "attention":
                x = block(x, x, m_inv)
            else:
                x = block(x)
        return x


class CoarseGenerator(nn.Module):
    def __init__(self, multiplier=1.0, attention_kwargs=None):
        super().__init__()
        self.layer_specs = _plan_specs(COARSE_PLAN, multiplier)
        self.stack = _GatedStack(5, COARSE_PLAN, multiplier, attention_kwargs or {})

    def forward(self, triplet, m_inv):
        return self.stack(triplet, m_inv)


class RefineGenerator(nn.Module):
    def __init__(self, multiplier=1.0, attention_kwargs=None):
        super().__init__()
        self.layer_specs = _plan_specs(REFINE_PLAN, multiplier)
        self.stack = _GatedStack(5, REFINE_PLAN, multiplier, attention_kwargs or {})

    def forward(self, triplet, m_inv):
        return self.stack(triplet, m_inv)


class ContentGenerator(nn.Module):
    """Coarse completion, then refinement on the coarse-filled composite."""

    def __init__(self, multiplier=1.0, patch_size=3, softmax_scale=10.0, attention_stride=1):
        super().__init__()
        attn = {"patch_size": patch_size, "softmax_scale": softmax_scale, "stride": attention_stride}
        self.coarse = CoarseGenerator(multiplier, attn)
        self.refine = RefineGenerator(multiplier, attn)
        self.layer_specs = self.coarse.layer_specs + self.refine.layer_specs
        self.fingerprint = fingerprint(
            self.layer_specs, net="content_generator", multiplier=multiplier, **attn
        )

    def forward(self, masked_object, m_vis, m_inv):
        triplet = torch.cat([masked_object, m_vis, m_inv], dim=1)
        coarse = self.coarse(triplet, m_inv)
        # refine sees the coarse fill in the hole, original values elsewhere
        refit = coarse * m_inv + masked_object * (1.0 - m_inv)
        refined = self.refine(torch.cat([refit, m_vis, m_inv], dim=1), m_inv)
        return coarse, refined


class Critic(nn.Module):
    """Unbounded scalar score; 5 stride-2 convolutions then a linear head."""

    def __init__(self, multiplier=1.0, in_channels=3):
        super().__init__()
        self.layer_specs = [
            LayerSpec(
                kind="conv",
                out_channels=scaled_channels(ch, multiplier),
                kernel=4,
                stride=2,
                activation="leaky",
                out_div=2 ** (i + 1),
            )
            for i, ch in enumerate(CRITIC_CHANNELS)
        ] + [LayerSpec(kind="linear", out_channels=1, kernel=1, activation="none", out_div=32)]
        self.fingerprint = fingerprint(
            self.layer_specs, net="critic", multiplier=multiplier, in_channels=in_channels
        )
        layers = []
        prev = in_channels
        for ch in CRITIC_CHANNELS:
            layers += [nn.Conv2d(prev, scaled_channels(ch, multiplier), 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
            prev = scaled_channels(ch, multiplier)
        self.features = nn.Sequential(*layers)
        self.out_features = prev
        self.head = nn.Linear(prev, 1)

    def forward(self, img):
        f = self.features(img)
        f = f.mean(dim=(2, 3))  # spatial average keeps the head resolution-free
        return self.head(f).squeeze(1)
