from .arch import LayerSpec, fingerprint, scaled_channels
from .checkpoint import (
    Checkpoint,
    load_checkpoint,
    restore_net,
    restore_optimizer,
    save_checkpoint,
)
from .content import ContentGenerator, CoarseGenerator, Critic, RefineGenerator
from .layers import ContextualAttention, GatedConv2d, UpsampleConv
from .unet import CompNet, ShapeNet, UNetBackbone, build_unet

__all__ = [
    "LayerSpec",
    "fingerprint",
    "scaled_channels",
    "Checkpoint",
    "load_checkpoint",
    "restore_net",
    "restore_optimizer",
    "save_checkpoint",
    "ContentGenerator",
    "CoarseGenerator",
    "Critic",
    "RefineGenerator",
    "ContextualAttention",
    "GatedConv2d",
    "UpsampleConv",
    "CompNet",
    "ShapeNet",
    "UNetBackbone",
    "build_unet",
]
