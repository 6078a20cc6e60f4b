"""U-Net backbone and the two heads built on it (mask prediction, compositing).

Backbone layout: 5 stride-2 down convolutions (64, 128, 256, 256, 256
channels), two stride-1 convolutions at the bottleneck, then 5 transposed
convolutions with skip connections to the stride-2 encoder outputs
(skip5..skip1), and a final 4x4 convolution to the requested output
channels. Batch norm everywhere except the first layer; leaky activations
down, relu up, tanh head by default.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import DimensionError
from .arch import LayerSpec, fingerprint, scaled_channels

ENCODER_S2 = (64, 128, 256, 256, 256)
BOTTLENECK = (256, 256)
DECODER = (256, 256, 128, 64, 64)


def unet_layer_specs(out_channels: int, multiplier: float = 1.0) -> list[LayerSpec]:
    specs = []
    div = 1
    for i, ch in enumerate(ENCODER_S2):
        div *= 2
        specs.append(
            LayerSpec(
                kind="conv",
                out_channels=scaled_channels(ch, multiplier),
                kernel=4,
                stride=2,
                activation="leaky",
                norm=i > 0,
                out_div=div,
            )
        )
    for ch in BOTTLENECK:
        specs.append(
            LayerSpec(
                kind="conv",
                out_channels=scaled_channels(ch, multiplier),
                kernel=4,
                stride=1,
                activation="leaky",
                norm=True,
                out_div=div,
            )
        )
    for i, ch in enumerate(DECODER):
        div //= 2
        specs.append(
            LayerSpec(
                kind="transposed_conv",
                out_channels=scaled_channels(ch, multiplier),
                kernel=4,
                stride=2,
                activation="relu",
                norm=True,
                skip_from=5 - i,
                out_div=div,
            )
        )
    specs.append(
        LayerSpec(kind="conv", out_channels=out_channels, kernel=4, stride=1, activation="tanh", out_div=1)
    )
    return specs


class UNetBackbone(nn.Module):
    def __init__(self, in_channels, out_channels, multiplier=1.0, final_activation="tanh"):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.multiplier = multiplier
        self.final_activation = final_activation
        self.layer_specs = unet_layer_specs(out_channels, multiplier)
        self.fingerprint = fingerprint(
            self.layer_specs,
            net="unet",
            in_channels=in_channels,
            out_channels=out_channels,
            multiplier=multiplier,
        )

        c = lambda base: scaled_channels(base, multiplier)
        self.down = nn.ModuleList()
        prev = in_channels
        for i, ch in enumerate(ENCODER_S2):
            block = [nn.Conv2d(prev, c(ch), 4, stride=2, padding=1)]
            if i > 0:
                block.append(nn.BatchNorm2d(c(ch)))
            block.append(nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*block))
            prev = c(ch)
        self.mid = nn.ModuleList()
        for ch in BOTTLENECK:
            self.mid.append(
                nn.Sequential(
                    nn.Conv2d(prev, c(ch), 4, stride=1, padding="same"),
                    nn.BatchNorm2d(c(ch)),
                    nn.LeakyReLU(0.2),
                )
            )
            prev = c(ch)
        self.up = nn.ModuleList()
        skip_channels = [c(ENCODER_S2[4 - i]) for i in range(5)]  # skip5 .. skip1
        for i, ch in enumerate(DECODER):
            self.up.append(
                nn.Sequential(
                    nn.ConvTranspose2d(prev + skip_channels[i], c(ch), 4, stride=2, padding=1),
                    nn.BatchNorm2d(c(ch)),
                    nn.ReLU(),
                )
            )
            prev = c(ch)
        self.head = nn.Conv2d(prev, out_channels, 4, stride=1, padding="same")

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise DimensionError(f"input {h}x{w} not divisible by 32")
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        for block in self.mid:
            x = block(x)
        for i, block in enumerate(self.up):
            x = block(torch.cat([x, skips[4 - i]], dim=1))
        x = self.head(x)
        if self.final_activation == "tanh":
            return torch.tanh(x)
        return x


def build_unet(in_channels, out_channels, multiplier=1.0, final_activation="tanh"):
    if in_channels < 1 or out_channels < 1:
        raise ValueError("channel counts must be >= 1")
    return UNetBackbone(in_channels, out_channels, multiplier, final_activation)


class ShapeNet(nn.Module):
    """Predicts visible and amodal mask probabilities from (image, rough mask)."""

    def __init__(self, multiplier=1.0):
        super().__init__()
        self.backbone = build_unet(4, 2, multiplier, final_activation="none")
        self.layer_specs = self.backbone.layer_specs
        self.fingerprint = fingerprint(self.layer_specs, net="shape", multiplier=multiplier)

    def forward(self, image, m_edit):
        logits = self.backbone(torch.cat([image, m_edit], dim=1))
        probs = torch.sigmoid(logits)
        return probs[:, 0:1], probs[:, 1:2]


class CompNet(nn.Module):
    """Predicts RGBA layers for blending an object onto a background.

    input_mode "concat" feeds (background, object) as 6 channels; "compose"
    pre-composes them with the object's support mask into 3 channels (the
    weaker variant from the input-format ablation).
    """

    def __init__(self, multiplier=1.0, input_mode="concat"):
        super().__init__()
        if input_mode not in ("concat", "compose"):
            raise ValueError(f"unknown input_mode {input_mode!r}")
        self.input_mode = input_mode
        in_ch = 6 if input_mode == "concat" else 3
        self.backbone = build_unet(in_ch, 4, multiplier, final_activation="none")
        self.layer_specs = self.backbone.layer_specs
        self.fingerprint = fingerprint(
            self.layer_specs, net="comp", multiplier=multiplier, input_mode=input_mode
        )

    def forward(self, background, obj, support_mask=None):
        if self.input_mode == "concat":
            x = torch.cat([background, obj], dim=1)
        else:
            if support_mask is None:
                raise ValueError("compose input mode requires the object support mask")
            x = obj * support_mask + background * (1.0 - support_mask)
        out = self.backbone(x)
        i_out = (torch.tanh(out[:, 0:3]) + 1.0) / 2.0
        alpha = torch.sigmoid(out[:, 3:4])
        return i_out, alpha
