"""Layer specifications and architecture fingerprints.

Every network exposes the ordered LayerSpec list it was built from; the
fingerprint hashes that list (plus channel multiplier and I/O channels) so
checkpoints can be matched to the instantiating architecture.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

VALID_KINDS = {
    "conv",
    "gated_conv",
    "transposed_conv",
    "upsample_conv",
    "attention",
    "linear",
}
VALID_STRIDES = {1, 2}
VALID_DILATIONS = {1, 2, 4, 8, 16}


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel: int = 0
    stride: int = 1
    dilation: int = 1
    activation: str = "none"
    norm: bool = False
    # Encoder layer (1-based) whose output is concatenated before this layer.
    skip_from: int | None = None
    # Spatial size of this layer's output as a divisor of the input size.
    out_div: int = 1

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind != "attention":
            if self.stride not in VALID_STRIDES:
                raise ValueError(f"stride must be 1 or 2, got {self.stride}")
            if self.dilation not in VALID_DILATIONS:
                raise ValueError(f"dilation must be in {sorted(VALID_DILATIONS)}")
            if self.out_channels <= 0:
                raise ValueError("out_channels must be positive")


def scaled_channels(base: int, multiplier: float) -> int:
    """Channel width after applying the desk-scale multiplier (min 1)."""
    return max(1, round(base * multiplier))


def fingerprint(specs: list[LayerSpec], **extra) -> str:
    """Stable hash of the architecture: LayerSpec list plus build arguments."""
    payload = {
        "layers": [asdict(s) for s in specs],
        "extra": {k: extra[k] for k in sorted(extra)},
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def specs_to_json(specs: list[LayerSpec]) -> list[dict]:
    return [asdict(s) for s in specs]


def specs_from_json(data: list[dict]) -> list[LayerSpec]:
    return [LayerSpec(**d) for d in data]
