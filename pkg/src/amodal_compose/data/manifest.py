"""Dataset manifest: a JSON index of per-instance image/mask files.

Schema: {"version": 1, "root": ".", "entries": [{"id", "image",
"visible_mask", "amodal_mask"?}]} with paths relative to the manifest's
root. Instances decode lazily at the working resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from ..core import load_image, load_mask, resize_image, resize_mask
from ..errors import ManifestError

MANIFEST_VERSION = 1


@dataclass
class Instance:
    image: np.ndarray
    visible_mask: np.ndarray
    amodal_mask: np.ndarray | None
    id: str
    source: str

    def __post_init__(self):
        if self.visible_mask.sum() <= 0:
            raise ManifestError(f"entry {self.id}: visible mask is empty")
        if self.amodal_mask is not None:
            if ((self.visible_mask > 0.5) & (self.amodal_mask < 0.5)).any():
                raise ManifestError(f"entry {self.id}: visible mask not inside amodal mask")


@dataclass
class ManifestEntry:
    id: str
    image: str
    visible_mask: str
    amodal_mask: str | None = None


@dataclass
class DatasetManifest:
    root: Path
    entries: list[ManifestEntry]
    version: int = MANIFEST_VERSION


def save_manifest(manifest: DatasetManifest, path) -> None:
    payload = {
        "version": manifest.version,
        "root": ".",
        "entries": [
            {k: v for k, v in vars(e).items() if v is not None} for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for field in ("version", "entries"):
        if field not in payload:
            raise ManifestError(f"manifest {path} missing field {field!r}")
    root = path.parent / payload.get("root", ".")
    entries = []
    for raw in payload["entries"]:
        try:
            entries.append(ManifestEntry(**raw))
        except TypeError as exc:
            raise ManifestError(f"bad manifest entry {raw.get('id', '?')}: {exc}") from exc
    return DatasetManifest(root=root, entries=entries, version=payload["version"])


def _load_entry(root: Path, entry: ManifestEntry, resolution: int | None) -> Instance:
    try:
        image = load_image(root / entry.image)
        visible = load_mask(root / entry.visible_mask)
        amodal = load_mask(root / entry.amodal_mask) if entry.amodal_mask else None
    except Exception as exc:
        raise ManifestError(f"entry {entry.id}: {exc}") from exc
    if visible.shape != image.shape[:2]:
        raise ManifestError(f"entry {entry.id}: mask shape {visible.shape} != image {image.shape[:2]}")
    if resolution is not None and image.shape[:2] != (resolution, resolution):
        image = resize_image(image, resolution, resolution)
        visible = resize_mask(visible, resolution, resolution)
        if amodal is not None:
            amodal = resize_mask(amodal, resolution, resolution)
    return Instance(
        image=image,
        visible_mask=visible,
        amodal_mask=amodal,
        id=entry.id,
        source=str(root / entry.image),
    )


def iterate_instances(manifest: DatasetManifest, resolution: int | None = None) -> Iterator[Instance]:
    for entry in manifest.entries:
        yield _load_entry(manifest.root, entry, resolution)


def load_all_instances(manifest: DatasetManifest, resolution: int | None = None) -> list[Instance]:
    return list(iterate_instances(manifest, resolution))
